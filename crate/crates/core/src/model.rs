//! The deep linear network: parameters, losses, empirical risk, analytic
//! gradients, and initializers that satisfy the training preconditions.
//!
//! A depth-L network is the tuple W = (W_L, ..., W_1) with W_k of shape
//! d_k x d_{k-1} and d_L = 1; its predictor is the product
//! w_prod = (W_L ... W_1)^T. The risk on signed points z_i = y_i x_i is
//! (1/n) sum_i loss(<w_prod, z_i>).

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{dot, frobenius_norm, matmul, outer, vec_norm, Matrix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("network needs at least one layer")]
    NoLayers,
    #[error("layer {k} has shape {rows}x{cols}, expected input width {expected_cols}")]
    LayerShape {
        k: usize,
        rows: usize,
        cols: usize,
        expected_cols: usize,
    },
    #[error("output layer must have a single row (got {rows})")]
    OutputWidth { rows: usize },
    #[error("dims must end in 1 and contain no zeros: {dims:?}")]
    BadDims { dims: Vec<usize> },
    #[error("dataset must contain at least one point")]
    EmptyDataset,
    #[error("point {index} has dimension {got}, expected {expected}")]
    InconsistentDim {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("label {label} at point {index} is not -1 or +1")]
    BadLabel { index: usize, label: f64 },
    #[error("point {index} has norm {norm} outside the unit ball")]
    PointOutsideBall { index: usize, norm: f64 },
    #[error("point {index} is the zero vector")]
    ZeroPoint { index: usize },
    #[error("point {index} has non-finite coordinates")]
    NonFinitePoint { index: usize },
}

/// Loss family tag; the closed-form families carry known smoothness and
/// Lipschitz constants, user-supplied ones carry whatever was declared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Exponential,
    Logistic,
    Custom,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Exponential => write!(f, "exponential"),
            LossKind::Logistic => write!(f, "logistic"),
            LossKind::Custom => write!(f, "custom"),
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A strictly decreasing margin loss with its derivative and, when known,
/// a Lipschitz constant for the derivative (`smoothness`) and a uniform
/// bound on |derivative| (`lipschitz`).
#[derive(Clone)]
pub struct Loss {
    kind: LossKind,
    value: ScalarFn,
    derivative: ScalarFn,
    smoothness: Option<f64>,
    lipschitz: Option<f64>,
}

impl fmt::Debug for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Loss")
            .field("kind", &self.kind)
            .field("smoothness", &self.smoothness)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Loss {
    /// exp(-x). Carries no global smoothness constants, so it is only
    /// eligible for gradient flow, not the adaptive descent schedule.
    pub fn exponential() -> Self {
        Self {
            kind: LossKind::Exponential,
            value: Arc::new(|x| (-x).exp()),
            derivative: Arc::new(|x| -(-x).exp()),
            smoothness: None,
            lipschitz: None,
        }
    }

    /// ln(1 + exp(-x)), evaluated stably on both tails. The derivative is
    /// 1/4-Lipschitz and bounded by 1 in magnitude.
    pub fn logistic() -> Self {
        Self {
            kind: LossKind::Logistic,
            value: Arc::new(|x| {
                if x >= 0.0 {
                    (-x).exp().ln_1p()
                } else {
                    -x + x.exp().ln_1p()
                }
            }),
            derivative: Arc::new(|x| -1.0 / (1.0 + x.exp())),
            smoothness: Some(0.25),
            lipschitz: Some(1.0),
        }
    }

    /// User-supplied loss. The caller is responsible for the declared
    /// constants; diagnostics are only guaranteed for the built-in families.
    pub fn custom(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        smoothness: Option<f64>,
        lipschitz: Option<f64>,
    ) -> Self {
        Self {
            kind: LossKind::Custom,
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            smoothness,
            lipschitz,
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }

    /// Lipschitz constant of the derivative, when known.
    pub fn smoothness(&self) -> Option<f64> {
        self.smoothness
    }

    /// Uniform bound on |derivative|, when known.
    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }
}

/// Weight matrices W_1 ... W_L, stored bottom-up; `layer(k)` is 1-based to
/// match the W_k naming used throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Matrix>,
}

impl NetworkParams {
    pub fn new(layers: Vec<Matrix>) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::NoLayers);
        }
        for k in 1..layers.len() {
            if layers[k].cols() != layers[k - 1].rows() {
                return Err(ModelError::LayerShape {
                    k: k + 1,
                    rows: layers[k].rows(),
                    cols: layers[k].cols(),
                    expected_cols: layers[k - 1].rows(),
                });
            }
        }
        let last = layers.last().unwrap();
        if last.rows() != 1 {
            return Err(ModelError::OutputWidth { rows: last.rows() });
        }
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// d_0 ... d_L.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].cols()];
        dims.extend(self.layers.iter().map(Matrix::rows));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    /// W_k, 1-based.
    pub fn layer(&self, k: usize) -> &Matrix {
        assert!(k >= 1 && k <= self.layers.len(), "layer index out of range");
        &self.layers[k - 1]
    }

    pub fn layer_mut(&mut self, k: usize) -> &mut Matrix {
        assert!(k >= 1 && k <= self.layers.len(), "layer index out of range");
        &mut self.layers[k - 1]
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn max_frobenius(&self) -> f64 {
        self.layers.iter().map(frobenius_norm).fold(0.0, f64::max)
    }
}

fn validate_dims(dims: &[usize]) -> Result<(), ModelError> {
    if dims.len() < 2 || dims.contains(&0) || *dims.last().unwrap() != 1 {
        return Err(ModelError::BadDims {
            dims: dims.to_vec(),
        });
    }
    Ok(())
}

/// Labeled points in the unit ball with labels in {-1, +1}; signed points
/// z_i = y_i x_i are cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<Vec<f64>>,
    labels: Vec<f64>,
    signed: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self, ModelError> {
        if points.is_empty() || points.len() != labels.len() {
            return Err(ModelError::EmptyDataset);
        }
        let dim = points[0].len();
        for (i, x) in points.iter().enumerate() {
            if x.len() != dim || dim == 0 {
                return Err(ModelError::InconsistentDim {
                    index: i,
                    got: x.len(),
                    expected: dim,
                });
            }
            if x.iter().any(|c| !c.is_finite()) {
                return Err(ModelError::NonFinitePoint { index: i });
            }
            let norm = vec_norm(x);
            if norm > 1.0 + 1e-12 {
                return Err(ModelError::PointOutsideBall { index: i, norm });
            }
            if norm == 0.0 {
                return Err(ModelError::ZeroPoint { index: i });
            }
        }
        for (i, y) in labels.iter().enumerate() {
            if *y != 1.0 && *y != -1.0 {
                return Err(ModelError::BadLabel {
                    index: i,
                    label: *y,
                });
            }
        }
        let signed = points
            .iter()
            .zip(&labels)
            .map(|(x, y)| x.iter().map(|c| c * y).collect())
            .collect();
        Ok(Self {
            points,
            labels,
            signed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    /// z_i = y_i x_i.
    pub fn signed(&self, i: usize) -> &[f64] {
        &self.signed[i]
    }

    /// Mean of the signed points.
    pub fn signed_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for z in &self.signed {
            for (m, zi) in mean.iter_mut().zip(z) {
                *m += zi;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

/// w_prod = (W_L ... W_1)^T as a vector in R^{d_0}.
pub fn product(w: &NetworkParams) -> Vec<f64> {
    let mut acc = w.layers[0].clone();
    for layer in &w.layers[1..] {
        acc = matmul(layer, &acc).expect("validated layer chain");
    }
    debug_assert_eq!(acc.rows(), 1);
    acc.row(0).to_vec()
}

/// Empirical risk of the network, evaluated by forward passes
/// (deliberately a different route from `risk_linear(product(w), ..)`).
pub fn risk(w: &NetworkParams, data: &Dataset, loss: &Loss) -> f64 {
    let n = data.len() as f64;
    let mut total = 0.0;
    for i in 0..data.len() {
        let mut h = data.point(i).to_vec();
        for layer in &w.layers {
            h = layer.matvec(&h);
        }
        debug_assert_eq!(h.len(), 1);
        total += loss.value(data.label(i) * h[0]);
    }
    total / n
}

/// Risk of a bare linear predictor: (1/n) sum_i loss(<w, z_i>).
pub fn risk_linear(w: &[f64], data: &Dataset, loss: &Loss) -> f64 {
    let n = data.len() as f64;
    (0..data.len())
        .map(|i| loss.value(dot(w, data.signed(i))))
        .sum::<f64>()
        / n
}

/// Gradient of the linear-predictor risk:
/// (1/n) sum_i loss'(<w, z_i>) z_i.
pub fn grad_linear(w: &[f64], data: &Dataset, loss: &Loss) -> Vec<f64> {
    let n = data.len() as f64;
    let mut grad = vec![0.0; w.len()];
    for i in 0..data.len() {
        let z = data.signed(i);
        let c = loss.derivative(dot(w, z)) / n;
        for (g, zi) in grad.iter_mut().zip(z) {
            *g += c * zi;
        }
    }
    grad
}

/// Row vector W_L ... W_{k+1} (the empty product is the 1x1 identity when
/// k = L).
fn suffix_product(w: &NetworkParams, k: usize) -> Matrix {
    let depth = w.depth();
    if k == depth {
        return Matrix::identity(1);
    }
    let mut acc = w.layer(depth).clone();
    for j in (k + 1..depth).rev() {
        acc = matmul(&acc, w.layer(j)).expect("validated layer chain");
    }
    acc
}

/// Matrix W_{k-1} ... W_1 (the empty product is the d_0 identity when
/// k = 1).
fn prefix_product(w: &NetworkParams, k: usize) -> Matrix {
    if k == 1 {
        return Matrix::identity(w.input_dim());
    }
    let mut acc = w.layer(1).clone();
    for j in 2..k {
        acc = matmul(w.layer(j), &acc).expect("validated layer chain");
    }
    acc
}

/// dR/dW_k = W_{k+1}^T ... W_L^T grad(w_prod)^T W_1^T ... W_{k-1}^T,
/// with empty products read as identities.
pub fn grad_layer(w: &NetworkParams, k: usize, data: &Dataset, loss: &Loss) -> Matrix {
    assert!(k >= 1 && k <= w.depth(), "layer index out of range");
    let wp = product(w);
    let g = grad_linear(&wp, data, loss);
    let suffix = suffix_product(w, k); // 1 x d_k
    let prefix = prefix_product(w, k); // d_{k-1} x d_0
    let pg = prefix.matvec(&g); // (W_{k-1}...W_1) grad, length d_{k-1}
    outer(suffix.row(0), &pg)
}

/// All layer gradients plus their total squared Frobenius norm.
#[derive(Debug, Clone)]
pub struct FullGradient {
    pub layers: Vec<Matrix>,
    pub sq_norm: f64,
}

pub fn full_gradient(w: &NetworkParams, data: &Dataset, loss: &Loss) -> FullGradient {
    let wp = product(w);
    let g = grad_linear(&wp, data, loss);
    let depth = w.depth();
    let mut layers = Vec::with_capacity(depth);
    let mut sq_norm = 0.0;
    for k in 1..=depth {
        let suffix = suffix_product(w, k);
        let prefix = prefix_product(w, k);
        let pg = prefix.matvec(&g);
        let gk = outer(suffix.row(0), &pg);
        sq_norm += gk.entries().iter().map(|e| e * e).sum::<f64>();
        layers.push(gk);
    }
    FullGradient { layers, sq_norm }
}

fn random_unit_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = vec_norm(&v);
        if n > 1e-6 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn random_layer(rows: usize, cols: usize, fro: f64, rng: &mut impl Rng) -> Matrix {
    loop {
        let m = Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
        let n = frobenius_norm(&m);
        if n > 1e-6 {
            return m.scale(fro / n);
        }
    }
}

/// W_1 = 0 with the remaining layers random (Frobenius norm `scale` each,
/// 1.0 being the usual choice), resampled until their product is nonzero.
/// The resulting start has the trivial risk loss(0) and, on separable
/// data, a nonzero gradient concentrated in the first layer.
pub fn init_zero_first_layer(
    dims: &[usize],
    scale: f64,
    rng: &mut impl Rng,
) -> Result<NetworkParams, ModelError> {
    validate_dims(dims)?;
    assert!(scale > 0.0 && scale.is_finite(), "scale must be positive");
    let depth = dims.len() - 1;
    loop {
        let mut layers = vec![Matrix::zeros(dims[1], dims[0])];
        for k in 2..=depth {
            layers.push(random_layer(dims[k], dims[k - 1], scale, rng));
        }
        let params = NetworkParams::new(layers)?;
        if depth == 1 {
            return Ok(params);
        }
        // Product of the layers above W_1.
        let mut acc = params.layer(2).clone();
        for j in 3..=depth {
            acc = matmul(params.layer(j), &acc).expect("validated layer chain");
        }
        if frobenius_norm(&acc) > 1e-9 {
            return Ok(params);
        }
    }
}

/// Balanced rank-one start built from shared unit factors a_0 ... a_L:
/// W_k = scale * a_k a_{k-1}^T. Adjacent layers satisfy
/// W_k W_k^T = W_{k+1}^T W_{k+1} exactly, every layer has Frobenius norm
/// `scale`, and the imbalance constant of the start is zero.
pub fn init_balanced(
    dims: &[usize],
    scale: f64,
    rng: &mut impl Rng,
) -> Result<NetworkParams, ModelError> {
    validate_dims(dims)?;
    assert!(scale > 0.0 && scale.is_finite(), "scale must be positive");
    let depth = dims.len() - 1;
    let factors: Vec<Vec<f64>> = dims.iter().map(|&d| random_unit_vector(d, rng)).collect();
    let layers = (1..=depth)
        .map(|k| outer(&factors[k], &factors[k - 1]).scale(scale))
        .collect();
    NetworkParams::new(layers)
}

/// Mirrored two-layer start W_1 = v, W_2 = -v^T on a one-dimensional input.
/// Its risk sits strictly above the trivial predictor's, and it stays there
/// under training; used as an adversarial control.
pub fn init_mirror(
    hidden: usize,
    scale: f64,
    rng: &mut impl Rng,
) -> Result<NetworkParams, ModelError> {
    assert!(hidden >= 1);
    assert!(scale > 0.0 && scale.is_finite());
    let v: Vec<f64> = random_unit_vector(hidden, rng)
        .iter()
        .map(|x| x * scale)
        .collect();
    let w1 = Matrix::column(&v);
    let w2 = Matrix::row_vector(&v).scale(-1.0);
    NetworkParams::new(vec![w1, w2])
}

/// Why a starting point is unusable for training.
#[derive(Debug, Clone, PartialEq)]
pub enum InitViolation {
    /// The gradient vanishes, so neither process can move.
    CriticalPoint,
    /// The starting risk exceeds the trivial predictor's loss(0), from which
    /// training may never recover.
    RiskAboveTrivial { risk: f64, trivial: f64 },
}

impl fmt::Display for InitViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitViolation::CriticalPoint => write!(f, "start is a critical point"),
            InitViolation::RiskAboveTrivial { risk, trivial } => {
                write!(f, "starting risk {risk} exceeds the trivial risk {trivial}")
            }
        }
    }
}

/// Outcome of the start-viability check: the start must not be a critical
/// point and must not sit above the trivial predictor's risk.
#[derive(Debug, Clone, PartialEq)]
pub enum InitCheck {
    Pass,
    Fail(InitViolation),
}

impl InitCheck {
    pub fn is_pass(&self) -> bool {
        matches!(self, InitCheck::Pass)
    }
}

pub fn check_init(w0: &NetworkParams, data: &Dataset, loss: &Loss) -> InitCheck {
    let r = risk(w0, data, loss);
    let trivial = loss.value(0.0);
    if r > trivial + 1e-12 {
        return InitCheck::Fail(InitViolation::RiskAboveTrivial { risk: r, trivial });
    }
    let grad = full_gradient(w0, data, loss);
    if grad.sq_norm <= 1e-24 {
        return InitCheck::Fail(InitViolation::CriticalPoint);
    }
    InitCheck::Pass
}
