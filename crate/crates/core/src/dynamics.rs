//! The two training processes: gradient descent with an adaptive
//! radius/step schedule, and gradient flow integrated by an adaptive
//! embedded Runge-Kutta method.
//!
//! The descent schedule keeps the iterate inside a Frobenius ball B(R-1)
//! and uses the step size min{1/beta(R), 1}, where beta(R) is the
//! smoothness constant of the risk on B(R); R starts at
//! ceil(max_k ||W_k(0)||_F) + 2 and grows by integer increments exactly
//! when a step lands outside B(R-1). Under this rule the risk never
//! increases, and per-step budget and drift invariants are tracked online.
//!
//! The flow integrator is a Dormand-Prince 5(4) pair with local
//! extrapolation; the balancedness residual (how far the adjacent-layer
//! conservation law has drifted from its initial value) doubles as an
//! end-to-end accuracy gauge, since the exact flow conserves it.

use thiserror::Error;

use crate::linalg::{frobenius_norm, gram_left, gram_right, Matrix};
use crate::model::{full_gradient, risk, Dataset, Loss, NetworkParams};

/// Which training process produced a trajectory; some diagnostic bounds
/// widen under descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Flow,
    Descent,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Flow => write!(f, "flow"),
            Mode::Descent => write!(f, "gd"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("the adaptive schedule needs a loss with declared smoothness and Lipschitz constants")]
    MissingSmoothness,
    #[error("smoothness constant is only defined for radius >= 1 (got {radius})")]
    RadiusBelowOne { radius: f64 },
    #[error("numerical failure at step {step}: {detail}")]
    NumericalFailure { step: usize, detail: String },
    #[error("step size underflow (h = {h:.3e}) at t = {time:.6e} after {accepted} accepted steps")]
    Stiffness {
        time: f64,
        h: f64,
        accepted: usize,
        last_good: Box<FlowState>,
    },
    #[error("snapshot observer failed: {0}")]
    Observer(String),
}

/// Smoothness constant of the risk restricted to the Frobenius ball B(R):
/// 2 L^2 R^{2L-2} (beta + G), valid for R >= 1.
pub fn smoothness_constant(
    depth: usize,
    radius: f64,
    beta: f64,
    lipschitz: f64,
) -> Result<f64, DynamicsError> {
    if radius < 1.0 {
        return Err(DynamicsError::RadiusBelowOne { radius });
    }
    let l = depth as f64;
    Ok(2.0 * l * l * radius.powi(2 * depth as i32 - 2) * (beta + lipschitz))
}

/// Radius and step size of the adaptive descent schedule. The invariant is
/// that the current iterate lies in B(radius - 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizeState {
    pub radius: f64,
    pub eta: f64,
    pub beta_r: f64,
}

impl StepSizeState {
    /// Schedule start: radius = ceil(max_k ||W_k(0)||_F) + 2, which puts the
    /// start strictly inside B(radius - 1).
    pub fn init(w0: &NetworkParams, loss: &Loss) -> Result<Self, DynamicsError> {
        let (beta, g) = match (loss.smoothness(), loss.lipschitz()) {
            (Some(b), Some(g)) => (b, g),
            _ => return Err(DynamicsError::MissingSmoothness),
        };
        let radius = w0.max_frobenius().ceil() + 2.0;
        Self::at_radius(w0.depth(), radius, beta, g)
    }

    fn at_radius(depth: usize, radius: f64, beta: f64, g: f64) -> Result<Self, DynamicsError> {
        let beta_r = smoothness_constant(depth, radius, beta, g)?;
        Ok(Self {
            radius,
            eta: (1.0 / beta_r).min(1.0),
            beta_r,
        })
    }
}

/// Per-step report from `gd_step`.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub eta: f64,
    pub radius: f64,
    pub grad_sq_norm: f64,
    pub risk_before: f64,
    pub risk_after: f64,
}

fn check_finite(w: &NetworkParams, risk_value: f64, step: usize) -> Result<(), DynamicsError> {
    let finite = w
        .layers()
        .iter()
        .all(|m| m.entries().iter().all(|e| e.is_finite()));
    if !finite || !risk_value.is_finite() {
        let norms: Vec<f64> = w.layers().iter().map(frobenius_norm).collect();
        return Err(DynamicsError::NumericalFailure {
            step,
            detail: format!("risk = {risk_value}, layer norms = {norms:?}"),
        });
    }
    Ok(())
}

fn gd_step_inner(
    w: &NetworkParams,
    state: &StepSizeState,
    risk_now: f64,
    data: &Dataset,
    loss: &Loss,
) -> Result<(NetworkParams, StepSizeState, StepInfo), DynamicsError> {
    let grad = full_gradient(w, data, loss);
    let eta = state.eta;
    let layers: Vec<Matrix> = w
        .layers()
        .iter()
        .zip(&grad.layers)
        .map(|(wk, gk)| wk.sub(&gk.scale(eta)))
        .collect();
    let next = NetworkParams::new(layers).expect("step preserves shapes");

    // Grow the radius in integer increments until the new iterate is back
    // inside B(radius - 1); the step size shrinks accordingly.
    let mut new_state = *state;
    let max_fro = next.max_frobenius();
    while max_fro > new_state.radius - 1.0 {
        let (beta, g) = (
            loss.smoothness().ok_or(DynamicsError::MissingSmoothness)?,
            loss.lipschitz().ok_or(DynamicsError::MissingSmoothness)?,
        );
        new_state = StepSizeState::at_radius(w.depth(), new_state.radius + 1.0, beta, g)?;
    }

    let risk_after = risk(&next, data, loss);
    check_finite(&next, risk_after, 0)?;
    Ok((
        next,
        new_state,
        StepInfo {
            eta,
            radius: state.radius,
            grad_sq_norm: grad.sq_norm,
            risk_before: risk_now,
            risk_after,
        },
    ))
}

/// One descent step under the adaptive schedule. An exactly critical point
/// returns an unchanged iterate.
pub fn gd_step(
    w: &NetworkParams,
    state: &StepSizeState,
    data: &Dataset,
    loss: &Loss,
) -> Result<(NetworkParams, StepSizeState, StepInfo), DynamicsError> {
    gd_step_inner(w, state, risk(w, data, loss), data, loss)
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    RiskFloor,
    MaxSteps,
    TimeEnd,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::RiskFloor => write!(f, "risk_floor"),
            StopReason::MaxSteps => write!(f, "max_steps"),
            StopReason::TimeEnd => write!(f, "t_end"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub max_steps: usize,
    /// Stop once the risk reaches this value; set to 0 to disable.
    pub risk_floor: f64,
}

/// One recorded point of a trajectory. Descent fills `eta`, `radius` and
/// `budget_sq`; flow fills `conservation_residual`. `time` is continuous
/// time for flow and the accumulated step-size sum for descent.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub risk: f64,
    pub eta: Option<f64>,
    pub radius: Option<f64>,
    /// Running sum of eta^2 ||grad||^2.
    pub budget_sq: Option<f64>,
    pub conservation_residual: Option<f64>,
    pub grad_sq_norm: f64,
    pub params: NetworkParams,
}

/// Geometric snapshot schedule: every step up to 100, then spacing grows by
/// a factor of 1.2.
#[derive(Debug, Clone, Copy)]
struct ThinSchedule {
    next: usize,
}

impl ThinSchedule {
    fn new() -> Self {
        Self { next: 0 }
    }

    fn due(&mut self, step: usize) -> bool {
        if step < self.next {
            return false;
        }
        self.next = if step < 100 {
            step + 1
        } else {
            ((step as f64 * 1.2).ceil() as usize).max(step + 1)
        };
        true
    }
}

/// Aggregate statistics of a descent run, accumulated over every step (not
/// just recorded snapshots).
#[derive(Debug, Clone)]
pub struct GdStats {
    pub steps: usize,
    pub initial_risk: f64,
    pub final_risk: f64,
    /// max over steps of risk(t+1) - risk(t); nonpositive when the risk is
    /// monotone.
    pub max_monotonicity_slack: f64,
    /// sum of eta^2 ||grad||^2.
    pub budget_sq: f64,
    /// sum of eta ||grad||^2; bounded by twice the initial risk under the
    /// adaptive schedule.
    pub budget_eta: f64,
    /// max over steps and layer pairs of the drift of Frobenius-norm-square
    /// differences from their initial values.
    pub max_pair_drift: f64,
    pub final_radius: Option<f64>,
    pub stop: StopReason,
}

pub struct GdRun {
    pub final_params: NetworkParams,
    pub stats: GdStats,
}

struct DriftTracker {
    initial_sq: Vec<f64>,
    max_drift: f64,
}

impl DriftTracker {
    fn new(w0: &NetworkParams) -> Self {
        Self {
            initial_sq: w0
                .layers()
                .iter()
                .map(|m| frobenius_norm(m).powi(2))
                .collect(),
            max_drift: 0.0,
        }
    }

    fn update(&mut self, w: &NetworkParams) {
        let sq: Vec<f64> = w
            .layers()
            .iter()
            .map(|m| frobenius_norm(m).powi(2))
            .collect();
        for k in 0..sq.len() {
            for j in (k + 1)..sq.len() {
                let drift = ((sq[k] - sq[j]) - (self.initial_sq[k] - self.initial_sq[j])).abs();
                self.max_drift = self.max_drift.max(drift);
            }
        }
    }
}

fn run_descent_loop(
    w0: &NetworkParams,
    data: &Dataset,
    loss: &Loss,
    stop: &StopRule,
    mut state: Option<StepSizeState>,
    const_eta: Option<f64>,
    mut observer: impl FnMut(&Snapshot) -> Result<(), DynamicsError>,
) -> Result<GdRun, DynamicsError> {
    let mut w = w0.clone();
    let mut risk_now = risk(&w, data, loss);
    check_finite(&w, risk_now, 0)?;
    let mut drift = DriftTracker::new(w0);
    let mut thin = ThinSchedule::new();
    let mut stats = GdStats {
        steps: 0,
        initial_risk: risk_now,
        final_risk: risk_now,
        max_monotonicity_slack: f64::NEG_INFINITY,
        budget_sq: 0.0,
        budget_eta: 0.0,
        max_pair_drift: 0.0,
        final_radius: state.as_ref().map(|s| s.radius),
        stop: StopReason::MaxSteps,
    };
    let mut time = 0.0;

    // Initial snapshot (step 0, before any update).
    let grad0 = full_gradient(&w, data, loss);
    thin.due(0);
    observer(&Snapshot {
        step: 0,
        time: 0.0,
        risk: risk_now,
        eta: None,
        radius: state.as_ref().map(|s| s.radius),
        budget_sq: Some(0.0),
        conservation_residual: None,
        grad_sq_norm: grad0.sq_norm,
        params: w.clone(),
    })?;

    if risk_now <= stop.risk_floor {
        stats.stop = StopReason::RiskFloor;
        return Ok(GdRun {
            final_params: w,
            stats,
        });
    }

    for step in 1..=stop.max_steps {
        let (next, info) = match (&mut state, const_eta) {
            (Some(s), None) => {
                let (next, new_state, info) =
                    gd_step_inner(&w, s, risk_now, data, loss).map_err(|e| match e {
                        DynamicsError::NumericalFailure { detail, .. } => {
                            DynamicsError::NumericalFailure { step, detail }
                        }
                        other => other,
                    })?;
                *s = new_state;
                (next, info)
            }
            (None, Some(eta)) => {
                let grad = full_gradient(&w, data, loss);
                let layers: Vec<Matrix> = w
                    .layers()
                    .iter()
                    .zip(&grad.layers)
                    .map(|(wk, gk)| wk.sub(&gk.scale(eta)))
                    .collect();
                let next = NetworkParams::new(layers).expect("step preserves shapes");
                let risk_after = risk(&next, data, loss);
                check_finite(&next, risk_after, step)?;
                (
                    next,
                    StepInfo {
                        eta,
                        radius: f64::NAN,
                        grad_sq_norm: grad.sq_norm,
                        risk_before: risk_now,
                        risk_after,
                    },
                )
            }
            _ => unreachable!("exactly one stepping rule is configured"),
        };

        stats.steps = step;
        stats.budget_sq += info.eta * info.eta * info.grad_sq_norm;
        stats.budget_eta += info.eta * info.grad_sq_norm;
        stats.max_monotonicity_slack = stats
            .max_monotonicity_slack
            .max(info.risk_after - info.risk_before);
        drift.update(&next);
        stats.max_pair_drift = drift.max_drift;
        time += info.eta;

        w = next;
        risk_now = info.risk_after;
        stats.final_risk = risk_now;
        stats.final_radius = state.as_ref().map(|s| s.radius);

        let reached_floor = risk_now <= stop.risk_floor;
        if thin.due(step) || reached_floor || step == stop.max_steps {
            observer(&Snapshot {
                step,
                time,
                risk: risk_now,
                eta: Some(info.eta),
                radius: state.as_ref().map(|s| s.radius),
                budget_sq: Some(stats.budget_sq),
                conservation_residual: None,
                grad_sq_norm: info.grad_sq_norm,
                params: w.clone(),
            })?;
        }
        if reached_floor {
            stats.stop = StopReason::RiskFloor;
            break;
        }
    }

    Ok(GdRun {
        final_params: w,
        stats,
    })
}

/// Gradient descent under the adaptive radius/step schedule. Requires a
/// loss with declared smoothness constants; the start should have passed
/// the init check.
pub fn gd_run(
    w0: &NetworkParams,
    data: &Dataset,
    loss: &Loss,
    stop: &StopRule,
    observer: impl FnMut(&Snapshot) -> Result<(), DynamicsError>,
) -> Result<GdRun, DynamicsError> {
    let state = StepSizeState::init(w0, loss)?;
    run_descent_loop(w0, data, loss, stop, Some(state), None, observer)
}

/// Gradient descent with a fixed step size. This bypasses the adaptive
/// schedule and its guarantees; it exists for controlled experiments such
/// as adversarial starts and losses without global smoothness constants.
pub fn gd_run_const_eta(
    w0: &NetworkParams,
    data: &Dataset,
    loss: &Loss,
    eta: f64,
    stop: &StopRule,
    observer: impl FnMut(&Snapshot) -> Result<(), DynamicsError>,
) -> Result<GdRun, DynamicsError> {
    assert!(eta > 0.0 && eta.is_finite(), "step size must be positive");
    run_descent_loop(w0, data, loss, stop, None, Some(eta), observer)
}

/// Flow state at one instant, with the cached initial values of the
/// adjacent-layer conservation quantities.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub time: f64,
    pub params: NetworkParams,
    /// W_{k+1}(0)^T W_{k+1}(0) - W_k(0) W_k(0)^T per adjacent pair.
    pub conservation_reference: Vec<Matrix>,
}

/// The conserved quantity per adjacent pair at the current parameters.
fn conservation_gaps(w: &NetworkParams) -> Vec<Matrix> {
    (1..w.depth())
        .map(|k| gram_right(w.layer(k + 1)).sub(&gram_left(w.layer(k))))
        .collect()
}

/// Max over adjacent pairs of the Frobenius distance between the current
/// conservation quantity and its value at the start.
pub fn conservation_residual(w: &NetworkParams, reference: &[Matrix]) -> f64 {
    conservation_gaps(w)
        .iter()
        .zip(reference)
        .map(|(now, then)| frobenius_norm(&now.sub(then)))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct FlowStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub initial_risk: f64,
    pub final_risk: f64,
    pub final_time: f64,
    /// Max conservation residual over recorded snapshots.
    pub max_conservation_residual: f64,
    pub stop: StopReason,
}

pub struct FlowRun {
    pub final_state: FlowState,
    pub stats: FlowStats,
}

struct ParamShape {
    shapes: Vec<(usize, usize)>,
}

impl ParamShape {
    fn of(w: &NetworkParams) -> Self {
        Self {
            shapes: w.layers().iter().map(|m| (m.rows(), m.cols())).collect(),
        }
    }

    fn flatten(&self, w: &NetworkParams) -> Vec<f64> {
        let mut y = Vec::new();
        for m in w.layers() {
            y.extend_from_slice(m.entries());
        }
        y
    }

    fn unflatten(&self, y: &[f64]) -> NetworkParams {
        let mut layers = Vec::with_capacity(self.shapes.len());
        let mut offset = 0;
        for &(r, c) in &self.shapes {
            let mut m = Matrix::zeros(r, c);
            for i in 0..r {
                for j in 0..c {
                    m.set(i, j, y[offset + i * c + j]);
                }
            }
            offset += r * c;
            layers.push(m);
        }
        NetworkParams::new(layers).expect("flattening preserves shapes")
    }
}

// Dormand-Prince 5(4) tableau.
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B5: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// b5 - b4, including the FSAL stage.
const ERR: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Gradient flow dW/dt = -grad R(W), integrated to `t_end` with local error
/// control at `tol` (used as both absolute and relative tolerance). Stops
/// early at `stop.risk_floor` or after `stop.max_steps` accepted steps.
pub fn flow_run(
    w0: &NetworkParams,
    data: &Dataset,
    loss: &Loss,
    t_end: f64,
    tol: f64,
    stop: &StopRule,
    mut observer: impl FnMut(&Snapshot) -> Result<(), DynamicsError>,
) -> Result<FlowRun, DynamicsError> {
    assert!(t_end > 0.0 && t_end.is_finite());
    assert!(tol > 0.0 && tol < 1.0);
    let shape = ParamShape::of(w0);
    let reference = conservation_gaps(w0);

    let deriv = |y: &[f64]| -> Vec<f64> {
        let params = shape.unflatten(y);
        let grad = full_gradient(&params, data, loss);
        let mut out = Vec::with_capacity(y.len());
        for g in &grad.layers {
            out.extend(g.entries().iter().map(|e| -e));
        }
        out
    };

    let mut y = shape.flatten(w0);
    let dim = y.len();
    let mut t = 0.0_f64;
    let mut k1 = deriv(&y);
    let initial_risk = risk(w0, data, loss);
    check_finite(w0, initial_risk, 0)?;

    let mut stats = FlowStats {
        accepted_steps: 0,
        rejected_steps: 0,
        initial_risk,
        final_risk: initial_risk,
        final_time: 0.0,
        max_conservation_residual: 0.0,
        stop: StopReason::TimeEnd,
    };
    let mut thin = ThinSchedule::new();

    let record = |step: usize,
                  t: f64,
                  risk_v: f64,
                  grad_sq: f64,
                  params: &NetworkParams,
                  stats: &mut FlowStats,
                  observer: &mut dyn FnMut(&Snapshot) -> Result<(), DynamicsError>|
     -> Result<(), DynamicsError> {
        let residual = conservation_residual(params, &reference);
        stats.max_conservation_residual = stats.max_conservation_residual.max(residual);
        observer(&Snapshot {
            step,
            time: t,
            risk: risk_v,
            eta: None,
            radius: None,
            budget_sq: None,
            conservation_residual: Some(residual),
            grad_sq_norm: grad_sq,
            params: params.clone(),
        })
    };

    thin.due(0);
    let grad_sq0: f64 = k1.iter().map(|g| g * g).sum();
    record(
        0,
        0.0,
        initial_risk,
        grad_sq0,
        w0,
        &mut stats,
        &mut observer,
    )?;
    if initial_risk <= stop.risk_floor {
        stats.stop = StopReason::RiskFloor;
        return Ok(FlowRun {
            final_state: FlowState {
                time: 0.0,
                params: w0.clone(),
                conservation_reference: reference,
            },
            stats,
        });
    }

    // Initial step size: the classic two-probe heuristic.
    let scale_of = |yi: f64| tol + tol * yi.abs();
    let mut h = {
        let d0 = (y.iter().map(|v| (v / scale_of(*v)).powi(2)).sum::<f64>() / dim as f64).sqrt();
        let d1 = (k1
            .iter()
            .zip(&y)
            .map(|(f, v)| (f / scale_of(*v)).powi(2))
            .sum::<f64>()
            / dim as f64)
            .sqrt();
        let h0 = if d0 >= 1e-5 && d1 >= 1e-5 {
            0.01 * d0 / d1
        } else {
            1e-6 * t_end
        };
        let y1: Vec<f64> = y.iter().zip(&k1).map(|(v, f)| v + h0 * f).collect();
        let f1 = deriv(&y1);
        let d2 = (f1
            .iter()
            .zip(&k1)
            .zip(&y)
            .map(|((a, b), v)| ((a - b) / scale_of(*v)).powi(2))
            .sum::<f64>()
            / dim as f64)
            .sqrt()
            / h0;
        let h1 = if d1.max(d2) > 1e-15 {
            (0.01 / d1.max(d2)).powf(0.2)
        } else {
            (h0 * 1e3).max(1e-6)
        };
        (100.0 * h0).min(h1).min(t_end)
    };

    let mut stages: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    while t < t_end {
        if stats.accepted_steps >= stop.max_steps {
            stats.stop = StopReason::MaxSteps;
            break;
        }
        h = h.min(t_end - t);
        if h < 1e-14 * t.max(1.0) {
            return Err(DynamicsError::Stiffness {
                time: t,
                h,
                accepted: stats.accepted_steps,
                last_good: Box::new(FlowState {
                    time: t,
                    params: shape.unflatten(&y),
                    conservation_reference: reference,
                }),
            });
        }

        stages[0].copy_from_slice(&k1);
        let combine = |y: &[f64], stages: &[Vec<f64>], coeffs: &[f64], h: f64| -> Vec<f64> {
            let mut out = y.to_vec();
            for (c, k) in coeffs.iter().zip(stages) {
                if *c != 0.0 {
                    for (o, ki) in out.iter_mut().zip(k) {
                        *o += h * c * ki;
                    }
                }
            }
            out
        };
        stages[1] = deriv(&combine(&y, &stages[..1], &A2, h));
        stages[2] = deriv(&combine(&y, &stages[..2], &A3, h));
        stages[3] = deriv(&combine(&y, &stages[..3], &A4, h));
        stages[4] = deriv(&combine(&y, &stages[..4], &A5, h));
        stages[5] = deriv(&combine(&y, &stages[..5], &A6, h));
        let y5 = combine(&y, &stages[..6], &B5, h);
        stages[6] = deriv(&y5);

        if y5.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NumericalFailure {
                step: stats.accepted_steps,
                detail: format!("non-finite state at t = {t}"),
            });
        }

        let mut err_sq = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (c, k) in ERR.iter().zip(&stages) {
                e += c * k[i];
            }
            e *= h;
            let sc = tol + tol * y[i].abs().max(y5[i].abs());
            err_sq += (e / sc).powi(2);
        }
        let err_norm = (err_sq / dim as f64).sqrt();

        if err_norm <= 1.0 {
            t += h;
            y = y5;
            k1.copy_from_slice(&stages[6]); // FSAL
            stats.accepted_steps += 1;
            stats.final_time = t;

            let params = shape.unflatten(&y);
            let risk_v = risk(&params, data, loss);
            check_finite(&params, risk_v, stats.accepted_steps)?;
            stats.final_risk = risk_v;

            let reached_floor = risk_v <= stop.risk_floor;
            let done = reached_floor || t >= t_end;
            if thin.due(stats.accepted_steps) || done {
                let grad_sq: f64 = k1.iter().map(|g| g * g).sum();
                record(
                    stats.accepted_steps,
                    t,
                    risk_v,
                    grad_sq,
                    &params,
                    &mut stats,
                    &mut observer,
                )?;
            }
            if reached_floor {
                stats.stop = StopReason::RiskFloor;
                break;
            }
            let factor = if err_norm == 0.0 {
                5.0
            } else {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
        } else {
            stats.rejected_steps += 1;
            h *= (0.9 * err_norm.powf(-0.2)).clamp(0.2, 1.0);
        }
    }

    Ok(FlowRun {
        final_state: FlowState {
            time: t,
            params: shape.unflatten(&y),
            conservation_reference: reference,
        },
        stats,
    })
}

/// First recorded index whose iterate has some layer Frobenius norm above
/// `r`, if any.
pub fn escape_time(snapshots: &[Snapshot], r: f64) -> Option<usize> {
    snapshots.iter().position(|s| s.params.max_frobenius() > r)
}
