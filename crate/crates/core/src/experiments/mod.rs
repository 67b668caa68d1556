//! Scenario definitions, the scenario runner, and trajectory persistence.
//!
//! A scenario bundles a data source, network shape, loss, initializer,
//! training mode, and stop criteria. Running one solves the max-margin
//! certificate first, trains, and streams one [`TrajectoryRecord`] per
//! recorded snapshot to an append-only CSV, so partial runs survive
//! failures. Identical scenarios (seeds included) produce byte-identical
//! outputs.

pub mod generators;
pub mod io;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diagnostics::{snapshot_report, AlignmentReport, DiagnosticsError};
use crate::dynamics::{
    flow_run, gd_run, gd_run_const_eta, DynamicsError, FlowStats, GdStats, Mode, Snapshot, StopRule,
};
use crate::geometry::{svm_solve, GeometryError, MarginCertificate};
use crate::linalg::frobenius_norm;
use crate::model::{
    check_init, init_balanced, init_mirror, init_zero_first_layer, risk, Dataset, InitCheck, Loss,
    ModelError, NetworkParams,
};

use generators::GeneratorError;
use io::{FileError, TrajectoryWriter};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    File(#[from] FileError),
    #[error("scenario config: {detail}")]
    Config { detail: String },
    #[error("init check failed: {reason} (mark the scenario `negative = true` to run anyway)")]
    InitCheckFailed { reason: String },
}

/// One row of the trajectory CSV; per-layer metrics are `None` where
/// undefined (zero layers, degenerate spectra) and serialize as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub time: f64,
    pub risk: f64,
    pub eta: Option<f64>,
    pub radius: Option<f64>,
    /// Cumulative sum of eta^2 ||grad||^2 (descent only).
    pub budget: Option<f64>,
    pub conservation_residual: Option<f64>,
    pub fro: Vec<f64>,
    pub spec: Vec<f64>,
    pub ratio: Vec<Option<f64>>,
    pub adjacent: Vec<Option<f64>>,
    pub cos_v1: Option<f64>,
    pub cos_ubar: Option<f64>,
    pub cos_v1_ubar: Option<f64>,
    pub margin_obj: Option<f64>,
    pub perp_mass: Option<f64>,
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    Blobs {
        n: usize,
        d: usize,
        margin: f64,
        seed: u64,
    },
    Circles {
        n: usize,
        separation: f64,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
    /// The single point x = 1 in R^1 with label +1; the adversarial
    /// mirrored start trains against this.
    SinglePoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    ZeroFirst,
    Balanced,
    Mirror,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Adaptive,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub generator: GeneratorSpec,
    pub depth: usize,
    pub hidden: usize,
    pub loss: crate::model::LossKind,
    pub init: InitKind,
    pub init_seed: u64,
    pub init_scale: f64,
    pub mode: Mode,
    pub step_rule: StepRule,
    pub max_steps: usize,
    pub risk_floor: f64,
    pub t_end: f64,
    pub tol: f64,
    pub out_dir: PathBuf,
    /// Adversarial control: run even though the init check fails.
    pub negative: bool,
}

impl Scenario {
    /// Parses the flat `key = value` scenario format. Unknown keys are
    /// rejected; every error carries its line number.
    pub fn parse_str(text: &str, origin: &str) -> Result<Scenario, ExperimentError> {
        let mut generator_kind: Option<String> = None;
        let mut n = None;
        let mut d = None;
        let mut margin = None;
        let mut separation = None;
        let mut data_seed = 0_u64;
        let mut dataset_path: Option<PathBuf> = None;
        let mut depth = None;
        let mut hidden = None;
        let mut loss = None;
        let mut init = InitKind::ZeroFirst;
        let mut init_seed = 0_u64;
        let mut init_scale = 1.0_f64;
        let mut mode = None;
        let mut step_rule = StepRule::Adaptive;
        let mut eta: Option<f64> = None;
        let mut max_steps = 200_000_usize;
        let mut risk_floor = 1e-3_f64;
        let mut t_end = 1000.0_f64;
        let mut tol = 1e-8_f64;
        let mut out_dir = PathBuf::from("out");
        let mut negative = false;

        let bad = |line: usize, detail: String| ExperimentError::Config {
            detail: format!("{origin}:{line}: {detail}"),
        };

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(line_no, format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            let value = value.trim();
            let parse_f = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| bad(line_no, format!("{key}: not a number: {v:?}")))
            };
            let parse_u = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| bad(line_no, format!("{key}: not an integer: {v:?}")))
            };
            match key {
                "generator" => generator_kind = Some(value.to_string()),
                "n" => n = Some(parse_u(value)? as usize),
                "d" => d = Some(parse_u(value)? as usize),
                "margin" => margin = Some(parse_f(value)?),
                "separation" => separation = Some(parse_f(value)?),
                "data_seed" => data_seed = parse_u(value)?,
                "dataset" => dataset_path = Some(PathBuf::from(value)),
                "depth" => depth = Some(parse_u(value)? as usize),
                "hidden" => hidden = Some(parse_u(value)? as usize),
                "loss" => {
                    loss = Some(match value {
                        "exponential" | "exp" => crate::model::LossKind::Exponential,
                        "logistic" | "log" => crate::model::LossKind::Logistic,
                        other => return Err(bad(line_no, format!("unknown loss {other:?}"))),
                    })
                }
                "init" => {
                    init = match value {
                        "zero_first" => InitKind::ZeroFirst,
                        "balanced" => InitKind::Balanced,
                        "mirror" => InitKind::Mirror,
                        other => return Err(bad(line_no, format!("unknown init {other:?}"))),
                    }
                }
                "init_seed" => init_seed = parse_u(value)?,
                "init_scale" => init_scale = parse_f(value)?,
                "mode" => {
                    mode = Some(match value {
                        "flow" => Mode::Flow,
                        "gd" => Mode::Descent,
                        other => return Err(bad(line_no, format!("unknown mode {other:?}"))),
                    })
                }
                "step_rule" => {
                    step_rule = match value {
                        "adaptive" => StepRule::Adaptive,
                        "constant" => StepRule::Constant(f64::NAN), // eta filled below
                        other => return Err(bad(line_no, format!("unknown step rule {other:?}"))),
                    }
                }
                "eta" => eta = Some(parse_f(value)?),
                "max_steps" => max_steps = parse_u(value)? as usize,
                "risk_floor" => risk_floor = parse_f(value)?,
                "t_end" => t_end = parse_f(value)?,
                "tol" => tol = parse_f(value)?,
                "out" => out_dir = PathBuf::from(value),
                "negative" => {
                    negative = match value {
                        "true" => true,
                        "false" => false,
                        other => return Err(bad(line_no, format!("bad bool {other:?}"))),
                    }
                }
                other => return Err(bad(line_no, format!("unknown key {other:?}"))),
            }
        }

        let missing = |key: &str| bad(0, format!("missing required key {key:?}"));
        let generator = match generator_kind.as_deref() {
            Some("blobs") => GeneratorSpec::Blobs {
                n: n.ok_or_else(|| missing("n"))?,
                d: d.ok_or_else(|| missing("d"))?,
                margin: margin.ok_or_else(|| missing("margin"))?,
                seed: data_seed,
            },
            Some("circles") => GeneratorSpec::Circles {
                n: n.ok_or_else(|| missing("n"))?,
                separation: separation.ok_or_else(|| missing("separation"))?,
                seed: data_seed,
            },
            Some("file") => GeneratorSpec::File {
                path: dataset_path.ok_or_else(|| missing("dataset"))?,
            },
            Some("point") => GeneratorSpec::SinglePoint,
            Some(other) => {
                return Err(bad(0, format!("unknown generator {other:?}")));
            }
            None => return Err(missing("generator")),
        };

        if let StepRule::Constant(_) = step_rule {
            let e = eta.ok_or_else(|| missing("eta"))?;
            if !(e > 0.0 && e.is_finite()) {
                return Err(bad(0, format!("eta must be positive, got {e}")));
            }
            step_rule = StepRule::Constant(e);
        }
        let depth = depth.ok_or_else(|| missing("depth"))?;
        if depth == 0 {
            return Err(bad(0, "depth must be at least 1".to_string()));
        }
        let mode = mode.ok_or_else(|| missing("mode"))?;
        if mode == Mode::Flow && matches!(step_rule, StepRule::Constant(_)) {
            return Err(bad(0, "constant step rule applies to gd only".to_string()));
        }

        Ok(Scenario {
            generator,
            depth,
            hidden: hidden.unwrap_or(0),
            loss: loss.ok_or_else(|| missing("loss"))?,
            init,
            init_seed,
            init_scale,
            mode,
            step_rule,
            max_steps,
            risk_floor,
            t_end,
            tol,
            out_dir,
            negative,
        })
    }

    pub fn parse_file(path: &Path) -> Result<Scenario, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Config {
            detail: format!("{}: {e}", path.display()),
        })?;
        Self::parse_str(&text, &path.display().to_string())
    }

    /// The effective configuration as flat key/value pairs, echoed into the
    /// trajectory header.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = Vec::new();
        match &self.generator {
            GeneratorSpec::Blobs { n, d, margin, seed } => {
                kv.push(("generator".into(), "blobs".into()));
                kv.push(("n".into(), n.to_string()));
                kv.push(("d".into(), d.to_string()));
                kv.push(("margin".into(), margin.to_string()));
                kv.push(("data_seed".into(), seed.to_string()));
            }
            GeneratorSpec::Circles {
                n,
                separation,
                seed,
            } => {
                kv.push(("generator".into(), "circles".into()));
                kv.push(("n".into(), n.to_string()));
                kv.push(("separation".into(), separation.to_string()));
                kv.push(("data_seed".into(), seed.to_string()));
            }
            GeneratorSpec::File { path } => {
                kv.push(("generator".into(), "file".into()));
                kv.push(("dataset".into(), path.display().to_string()));
            }
            GeneratorSpec::SinglePoint => {
                kv.push(("generator".into(), "point".into()));
            }
        }
        kv.push(("depth".into(), self.depth.to_string()));
        kv.push(("hidden".into(), self.hidden.to_string()));
        kv.push((
            "loss".into(),
            match self.loss {
                crate::model::LossKind::Exponential => "exponential".into(),
                crate::model::LossKind::Logistic => "logistic".into(),
                crate::model::LossKind::Custom => "custom".into(),
            },
        ));
        kv.push((
            "init".into(),
            match self.init {
                InitKind::ZeroFirst => "zero_first".into(),
                InitKind::Balanced => "balanced".into(),
                InitKind::Mirror => "mirror".into(),
            },
        ));
        kv.push(("init_seed".into(), self.init_seed.to_string()));
        kv.push(("init_scale".into(), self.init_scale.to_string()));
        kv.push(("mode".into(), self.mode.to_string()));
        match self.step_rule {
            StepRule::Adaptive => kv.push(("step_rule".into(), "adaptive".into())),
            StepRule::Constant(eta) => {
                kv.push(("step_rule".into(), "constant".into()));
                kv.push(("eta".into(), eta.to_string()));
            }
        }
        kv.push(("max_steps".into(), self.max_steps.to_string()));
        kv.push(("risk_floor".into(), self.risk_floor.to_string()));
        if self.mode == Mode::Flow {
            kv.push(("t_end".into(), self.t_end.to_string()));
            kv.push(("tol".into(), self.tol.to_string()));
        }
        kv.push(("negative".into(), self.negative.to_string()));
        kv
    }

    fn loss_fn(&self) -> Loss {
        match self.loss {
            crate::model::LossKind::Exponential => Loss::exponential(),
            crate::model::LossKind::Logistic => Loss::logistic(),
            crate::model::LossKind::Custom => {
                unreachable!("scenario files only name built-in losses")
            }
        }
    }
}

/// Everything a finished (or partially finished) run leaves behind.
#[derive(Debug)]
pub struct ScenarioOutcome {
    pub trajectory_path: PathBuf,
    pub summary_path: PathBuf,
    pub records_written: usize,
    pub dataset: Dataset,
    pub certificate: MarginCertificate,
    pub init_check: InitCheck,
    pub initial_params: NetworkParams,
    pub final_params: NetworkParams,
    pub final_report: AlignmentReport,
    pub gd_stats: Option<GdStats>,
    pub flow_stats: Option<FlowStats>,
}

pub fn build_dataset(spec: &GeneratorSpec) -> Result<Dataset, ExperimentError> {
    Ok(match spec {
        GeneratorSpec::Blobs { n, d, margin, seed } => {
            generators::gen_separable_blobs(*n, *d, *margin, *seed)?.dataset
        }
        GeneratorSpec::Circles {
            n,
            separation,
            seed,
        } => generators::gen_two_circles(*n, *separation, *seed)?,
        GeneratorSpec::File { path } => io::load_dataset(path)?,
        GeneratorSpec::SinglePoint => {
            Dataset::new(vec![vec![1.0]], vec![1.0]).expect("static point is valid")
        }
    })
}

fn build_init(s: &Scenario, input_dim: usize) -> Result<NetworkParams, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.init_seed);
    let hidden = if s.hidden == 0 { input_dim } else { s.hidden };
    match s.init {
        InitKind::Mirror => {
            if s.depth != 2 || input_dim != 1 {
                return Err(ExperimentError::Config {
                    detail: "mirror init needs depth = 2 and one-dimensional data".into(),
                });
            }
            Ok(init_mirror(hidden.max(1), s.init_scale, &mut rng)?)
        }
        InitKind::ZeroFirst => {
            let dims = layer_dims(input_dim, hidden, s.depth);
            Ok(init_zero_first_layer(&dims, s.init_scale, &mut rng)?)
        }
        InitKind::Balanced => {
            let dims = layer_dims(input_dim, hidden, s.depth);
            Ok(init_balanced(&dims, s.init_scale, &mut rng)?)
        }
    }
}

fn layer_dims(input_dim: usize, hidden: usize, depth: usize) -> Vec<usize> {
    let mut dims = vec![input_dim];
    for _ in 1..depth {
        dims.push(hidden);
    }
    dims.push(1);
    dims
}

fn record_from_snapshot(snap: &Snapshot, report: &AlignmentReport) -> TrajectoryRecord {
    let fro: Vec<f64> = snap.params.layers().iter().map(frobenius_norm).collect();
    let spec: Vec<f64> = snap
        .params
        .layers()
        .iter()
        .zip(report.ratios.iter().zip(&fro))
        .map(|(_, (ratio, f))| ratio.map_or(0.0, |r| r * f))
        .collect();
    TrajectoryRecord {
        step: snap.step,
        time: snap.time,
        risk: snap.risk,
        eta: snap.eta,
        radius: snap.radius,
        budget: snap.budget_sq,
        conservation_residual: snap.conservation_residual,
        fro,
        spec,
        ratio: report.ratios.clone(),
        adjacent: report.adjacent.clone(),
        cos_v1: report.cos_v1,
        cos_ubar: report.cos_ubar,
        cos_v1_ubar: report.cos_v1_ubar,
        margin_obj: report.margin_objective,
        perp_mass: report.perp_mass,
    }
}

/// Runs a scenario end to end: dataset, margin certificate, init check,
/// training, per-snapshot diagnostics streamed to
/// `<out>/trajectory.csv`, and a final summary at `<out>/summary.txt`.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioOutcome, ExperimentError> {
    let data = build_dataset(&s.generator)?;
    let cert = svm_solve(&data, 1e-8)?;
    let loss = s.loss_fn();
    let w0 = build_init(s, data.dim())?;
    let init_check = check_init(&w0, &data, &loss);
    if !init_check.is_pass() && !s.negative {
        let reason = match &init_check {
            InitCheck::Fail(v) => v.to_string(),
            InitCheck::Pass => unreachable!(),
        };
        return Err(ExperimentError::InitCheckFailed { reason });
    }
    let risk0 = risk(&w0, &data, &loss);

    std::fs::create_dir_all(&s.out_dir).map_err(FileError::Io)?;
    let trajectory_path = s.out_dir.join("trajectory.csv");
    let summary_path = s.out_dir.join("summary.txt");
    let mut writer = TrajectoryWriter::create(&trajectory_path, s.depth, &s.to_key_values())?;

    let mut records_written = 0_usize;
    let stop = StopRule {
        max_steps: s.max_steps,
        risk_floor: s.risk_floor,
    };

    let mode = s.mode;
    let observer = |snap: &Snapshot| -> Result<(), DynamicsError> {
        let report = snapshot_report(&snap.params, &w0, &data, &cert, mode, risk0)
            .map_err(|e| DynamicsError::Observer(e.to_string()))?;
        let record = record_from_snapshot(snap, &report);
        writer
            .write(&record)
            .map_err(|e| DynamicsError::Observer(e.to_string()))?;
        records_written += 1;
        Ok(())
    };

    let (final_params, gd_stats, flow_stats) = match (s.mode, s.step_rule) {
        (Mode::Descent, StepRule::Adaptive) => {
            let run = gd_run(&w0, &data, &loss, &stop, observer)?;
            (run.final_params, Some(run.stats), None)
        }
        (Mode::Descent, StepRule::Constant(eta)) => {
            let run = gd_run_const_eta(&w0, &data, &loss, eta, &stop, observer)?;
            (run.final_params, Some(run.stats), None)
        }
        (Mode::Flow, StepRule::Adaptive) => {
            let run = flow_run(&w0, &data, &loss, s.t_end, s.tol, &stop, observer)?;
            (run.final_state.params, None, Some(run.stats))
        }
        (Mode::Flow, StepRule::Constant(_)) => {
            return Err(ExperimentError::Config {
                detail: "constant step rule applies to gd only".into(),
            });
        }
    };

    let final_report = snapshot_report(&final_params, &w0, &data, &cert, s.mode, risk0)?;
    let summary = render_summary(s, &cert, &final_report, &gd_stats, &flow_stats);
    std::fs::write(&summary_path, summary).map_err(FileError::Io)?;

    Ok(ScenarioOutcome {
        trajectory_path,
        summary_path,
        records_written,
        dataset: data,
        certificate: cert,
        init_check,
        initial_params: w0,
        final_params,
        final_report,
        gd_stats,
        flow_stats,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

fn render_summary(
    s: &Scenario,
    cert: &MarginCertificate,
    report: &AlignmentReport,
    gd: &Option<GdStats>,
    flow: &Option<FlowStats>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# scenario summary");
    for (k, v) in s.to_key_values() {
        let _ = writeln!(out, "{k} = {v}");
    }
    let _ = writeln!(out, "gamma = {}", cert.gamma);
    let _ = writeln!(out, "support_size = {}", cert.support.len());
    if let Some(stats) = gd {
        let _ = writeln!(out, "steps = {}", stats.steps);
        let _ = writeln!(out, "initial_risk = {}", stats.initial_risk);
        let _ = writeln!(out, "final_risk = {}", stats.final_risk);
        let _ = writeln!(out, "stop = {}", stats.stop);
        let _ = writeln!(
            out,
            "max_monotonicity_slack = {}",
            stats.max_monotonicity_slack
        );
        let _ = writeln!(out, "budget_eta = {}", stats.budget_eta);
        let _ = writeln!(out, "budget_sq = {}", stats.budget_sq);
        let _ = writeln!(out, "max_pair_drift = {}", stats.max_pair_drift);
        let _ = writeln!(out, "final_radius = {}", fmt_opt(stats.final_radius));
    }
    if let Some(stats) = flow {
        let _ = writeln!(out, "accepted_steps = {}", stats.accepted_steps);
        let _ = writeln!(out, "rejected_steps = {}", stats.rejected_steps);
        let _ = writeln!(out, "initial_risk = {}", stats.initial_risk);
        let _ = writeln!(out, "final_risk = {}", stats.final_risk);
        let _ = writeln!(out, "final_time = {}", stats.final_time);
        let _ = writeln!(out, "stop = {}", stats.stop);
        let _ = writeln!(
            out,
            "max_conservation_residual = {}",
            stats.max_conservation_residual
        );
    }
    for (k, r) in report.ratios.iter().enumerate() {
        let _ = writeln!(out, "ratio_{} = {}", k + 1, fmt_opt(*r));
    }
    for (k, a) in report.adjacent.iter().enumerate() {
        let _ = writeln!(out, "adj_{} = {}", k + 1, fmt_opt(*a));
    }
    let _ = writeln!(out, "cos_v1 = {}", fmt_opt(report.cos_v1));
    let _ = writeln!(out, "cos_ubar = {}", fmt_opt(report.cos_ubar));
    let _ = writeln!(out, "cos_v1_ubar = {}", fmt_opt(report.cos_v1_ubar));
    let _ = writeln!(out, "margin_obj = {}", fmt_opt(report.margin_objective));
    let _ = writeln!(out, "perp_mass = {}", fmt_opt(report.perp_mass));
    out
}
