//! Max-margin geometry of a separable dataset: the hard-margin SVM
//! certificate (direction, margin, support set, dual weights), the spread
//! constant of the support set, and the thresholds beyond which the
//! component of a predictor orthogonal to the max-margin direction cannot
//! grow.
//!
//! The solver is dual coordinate ascent on the homogeneous hard-margin
//! program min ||w||^2/2 subject to <w, z_i> >= 1, which has no bias term
//! and hence no equality constraint; every certificate it produces can be
//! re-verified independently via [`verify_certificate`].

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{dot, normalize, vec_norm, Matrix};
use crate::model::{grad_linear, Dataset, Loss, LossKind};
use crate::oracle;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dataset is not linearly separable (best margin {best_margin:.3e})")]
    NonSeparable { best_margin: f64 },
    #[error("support vectors span a {rank}-dimensional subspace of R^{dim}")]
    SupportSpanDeficient { rank: usize, dim: usize },
    #[error("spread constant is undefined for dimension {dim}")]
    DegenerateDimension { dim: usize },
    #[error("no perpendicular-growth threshold for the {kind} loss")]
    UnsupportedLoss { kind: LossKind },
    #[error("certificate check failed: {0}")]
    Certificate(#[from] CertificateViolation),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertificateViolation {
    #[error("direction norm {norm} is not 1")]
    DirectionNotUnit { norm: f64 },
    #[error("margin {gamma} is not positive")]
    NonPositiveMargin { gamma: f64 },
    #[error("point {index} has margin {margin}, below gamma = {gamma}")]
    PrimalInfeasible {
        index: usize,
        margin: f64,
        gamma: f64,
    },
    #[error("support point {index} has margin {margin}, not tight at gamma = {gamma}")]
    SlackSupport {
        index: usize,
        margin: f64,
        gamma: f64,
    },
    #[error("non-support point {index} has margin {margin}, tight at gamma = {gamma}")]
    TightNonSupport {
        index: usize,
        margin: f64,
        gamma: f64,
    },
    #[error("dual weight {alpha} at support point {index} is negative")]
    NegativeDual { index: usize, alpha: f64 },
    #[error("stationarity residual ||sum alpha_i z_i - u_bar|| = {residual}")]
    NotStationary { residual: f64 },
}

/// Certificate of the hard-margin SVM solution: the max-margin unit
/// direction, the margin, the support set with dual weights scaled so that
/// sum of alpha_i z_i equals the direction, and (once computed) the spread
/// constant of the support set.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginCertificate {
    pub u_bar: Vec<f64>,
    pub gamma: f64,
    /// Sorted indices of points whose margin is tight.
    pub support: Vec<usize>,
    /// Dual weights, aligned with `support`.
    pub duals: Vec<f64>,
    /// min over unit xi orthogonal to u_bar of max over support of
    /// <xi, z_i>; filled by [`spread_alpha`].
    pub spread: Option<f64>,
}

/// Margin of a point counts as tight when it is within this relative slack
/// of gamma.
const SUPPORT_REL_TOL: f64 = 1e-6;
/// Best margins at or below this are declared non-separable.
const SEPARABLE_FLOOR: f64 = 1e-9;

/// Solves the hard-margin SVM by dual coordinate ascent.
///
/// `tol` bounds the accepted KKT violation of the scaled dual program and
/// the tolerances used by the internal certificate checks. Errors on
/// non-separable data.
pub fn svm_solve(data: &Dataset, tol: f64) -> Result<MarginCertificate, GeometryError> {
    assert!(tol > 0.0 && tol < 1.0, "tolerance must be in (0, 1)");
    let n = data.len();
    let inner_tol = (tol * 1e-2).min(1e-10);
    let max_sweeps = 200_000;

    let sq_norms: Vec<f64> = (0..n)
        .map(|i| dot(data.signed(i), data.signed(i)))
        .collect();
    let mut alpha = vec![0.0_f64; n];
    let mut w = vec![0.0_f64; data.dim()];

    let mut sweeps = 0;
    loop {
        let mut worst = 0.0_f64;
        for i in 0..n {
            let z = data.signed(i);
            let g = 1.0 - dot(&w, z);
            let violation = if alpha[i] > 0.0 { g.abs() } else { g.max(0.0) };
            worst = worst.max(violation);
            if violation == 0.0 {
                continue;
            }
            let new_alpha = (alpha[i] + g / sq_norms[i]).max(0.0);
            let delta = new_alpha - alpha[i];
            if delta != 0.0 {
                alpha[i] = new_alpha;
                for (wj, zj) in w.iter_mut().zip(z) {
                    *wj += delta * zj;
                }
            }
        }
        sweeps += 1;
        if sweeps % 128 == 0 {
            // Refresh w from scratch to shed accumulated update drift.
            w = vec![0.0; data.dim()];
            for i in 0..n {
                if alpha[i] > 0.0 {
                    for (wj, zj) in w.iter_mut().zip(data.signed(i)) {
                        *wj += alpha[i] * zj;
                    }
                }
            }
        }
        if worst <= inner_tol || sweeps >= max_sweeps {
            break;
        }
    }

    let w_norm = vec_norm(&w);
    if w_norm <= SEPARABLE_FLOOR {
        return Err(GeometryError::NonSeparable { best_margin: 0.0 });
    }
    let u_bar: Vec<f64> = w.iter().map(|x| x / w_norm).collect();
    let gamma = (0..n)
        .map(|i| dot(&u_bar, data.signed(i)))
        .fold(f64::INFINITY, f64::min);
    if gamma <= SEPARABLE_FLOOR {
        return Err(GeometryError::NonSeparable { best_margin: gamma });
    }

    // Scale duals so that sum alpha_i z_i = u_bar, and restrict to the
    // support set (margin tight within gamma * SUPPORT_REL_TOL).
    let mut support = Vec::new();
    let mut duals = Vec::new();
    for i in 0..n {
        let margin = dot(&u_bar, data.signed(i));
        if margin <= gamma * (1.0 + SUPPORT_REL_TOL) {
            support.push(i);
            duals.push(alpha[i] / w_norm);
        }
    }

    let cert = MarginCertificate {
        u_bar,
        gamma,
        support,
        duals,
        spread: None,
    };
    verify_certificate(data, &cert, tol)?;
    Ok(cert)
}

/// Independent verification of a margin certificate: unit direction,
/// positive margin, primal feasibility, tightness exactly on the support
/// set, nonnegative duals, and stationarity sum alpha_i z_i = u_bar.
pub fn verify_certificate(
    data: &Dataset,
    cert: &MarginCertificate,
    tol: f64,
) -> Result<(), CertificateViolation> {
    let norm = vec_norm(&cert.u_bar);
    if (norm - 1.0).abs() > tol {
        return Err(CertificateViolation::DirectionNotUnit { norm });
    }
    if cert.gamma <= 0.0 {
        return Err(CertificateViolation::NonPositiveMargin { gamma: cert.gamma });
    }
    let gamma = cert.gamma;
    let tight = |margin: f64| (margin - gamma).abs() <= gamma * SUPPORT_REL_TOL + tol;
    for i in 0..data.len() {
        let margin = dot(&cert.u_bar, data.signed(i));
        if margin < gamma - tol {
            return Err(CertificateViolation::PrimalInfeasible {
                index: i,
                margin,
                gamma,
            });
        }
        let in_support = cert.support.binary_search(&i).is_ok();
        if in_support && !tight(margin) {
            return Err(CertificateViolation::SlackSupport {
                index: i,
                margin,
                gamma,
            });
        }
        if !in_support && tight(margin) {
            return Err(CertificateViolation::TightNonSupport {
                index: i,
                margin,
                gamma,
            });
        }
    }
    let mut recon = vec![0.0; data.dim()];
    for (&i, &a) in cert.support.iter().zip(&cert.duals) {
        if a < 0.0 {
            return Err(CertificateViolation::NegativeDual { index: i, alpha: a });
        }
        for (r, zj) in recon.iter_mut().zip(data.signed(i)) {
            *r += a * zj;
        }
    }
    let residual = recon
        .iter()
        .zip(&cert.u_bar)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if residual > tol {
        return Err(CertificateViolation::NotStationary { residual });
    }
    Ok(())
}

/// The spread constant: min over unit xi orthogonal to u_bar of the max
/// over support points of <xi, z_i>. Positive whenever the support vectors
/// span the whole space, which is checked first.
///
/// Minimization runs multi-start projected subgradient descent on the unit
/// sphere of the orthogonal complement, followed by a shrinking random
/// polish; all randomness is internally seeded, so the result is
/// deterministic.
pub fn spread_alpha(data: &Dataset, cert: &MarginCertificate) -> Result<f64, GeometryError> {
    let d = data.dim();
    if d < 2 {
        return Err(GeometryError::DegenerateDimension { dim: d });
    }
    let support_rows: Vec<Vec<f64>> = cert
        .support
        .iter()
        .map(|&i| data.signed(i).to_vec())
        .collect();
    let support_matrix = Matrix::from_rows(&support_rows).expect("support points are finite");
    let rank = oracle::rank(&support_matrix, 1e-9);
    if rank < d {
        return Err(GeometryError::SupportSpanDeficient { rank, dim: d });
    }

    let basis = oracle::orthonormal_complement(&cert.u_bar);
    let m = basis.len(); // d - 1
    let objective = |s: &[f64]| -> (f64, usize) {
        // xi = basis * s; returns (max_i <xi, z_i>, argmax).
        let mut best = (f64::NEG_INFINITY, 0);
        for (pos, row) in support_rows.iter().enumerate() {
            let mut val = 0.0;
            for (sj, bj) in s.iter().zip(&basis) {
                val += sj * dot(bj, row);
            }
            if val > best.0 {
                best = (val, pos);
            }
        }
        best
    };
    // Gradient of s -> <basis s, z_i> is the coordinate vector of z_i in the
    // basis.
    let coords: Vec<Vec<f64>> = support_rows
        .iter()
        .map(|row| basis.iter().map(|b| dot(b, row)).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0001);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        starts.push(e.clone());
        e[j] = -1.0;
        starts.push(e);
    }
    for _ in 0..16 {
        let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        if vec_norm(&raw) > 1e-6 {
            starts.push(normalize(&raw));
        }
    }

    let mut best_val = f64::INFINITY;
    let mut best_s = starts[0].clone();
    for start in &starts {
        let mut s = start.clone();
        let mut local_best = objective(&s).0;
        let mut local_s = s.clone();
        for t in 0..600 {
            let (_, active) = objective(&s);
            let step = 0.5 / ((t + 1) as f64).sqrt();
            for (sj, gj) in s.iter_mut().zip(&coords[active]) {
                *sj -= step * gj;
            }
            let n = vec_norm(&s);
            if n < 1e-12 {
                break;
            }
            s.iter_mut().for_each(|x| *x /= n);
            let val = objective(&s).0;
            if val < local_best {
                local_best = val;
                local_s = s.clone();
            }
        }
        if local_best < best_val {
            best_val = local_best;
            best_s = local_s;
        }
    }

    // Shrinking random polish around the incumbent.
    let mut scale = 0.3_f64;
    while scale > 1e-8 {
        let mut improved = false;
        for _ in 0..200 {
            let cand: Vec<f64> = best_s
                .iter()
                .map(|x| x + scale * (rng.random::<f64>() * 2.0 - 1.0))
                .collect();
            let n = vec_norm(&cand);
            if n < 1e-12 {
                continue;
            }
            let cand: Vec<f64> = cand.iter().map(|x| x / n).collect();
            let val = objective(&cand).0;
            if val < best_val {
                best_val = val;
                best_s = cand;
                improved = true;
            }
        }
        if !improved {
            scale *= 0.5;
        }
    }

    Ok(best_val)
}

/// Radius beyond which the component of a predictor orthogonal to the
/// max-margin direction cannot keep growing: (1 + ln n)/alpha for the
/// exponential loss and 2n/(e alpha) for the logistic loss. `n` is the
/// dataset size (taken as a real number so the formula can be probed
/// directly).
pub fn perp_threshold(kind: LossKind, n: f64, alpha: f64) -> Result<f64, GeometryError> {
    assert!(alpha > 0.0, "spread constant must be positive");
    assert!(n >= 1.0, "dataset size must be at least 1");
    match kind {
        LossKind::Exponential => Ok((1.0 + n.ln()) / alpha),
        LossKind::Logistic => Ok(2.0 * n / (std::f64::consts::E * alpha)),
        LossKind::Custom => Err(GeometryError::UnsupportedLoss { kind }),
    }
}

/// <perp(w), grad R(w)>, where perp projects onto the complement of the
/// max-margin direction. A nonnegative value means the orthogonal mass of
/// `w` is not about to grow under flow.
pub fn perp_growth_indicator(
    w: &[f64],
    data: &Dataset,
    loss: &Loss,
    cert: &MarginCertificate,
) -> f64 {
    let along = dot(w, &cert.u_bar);
    let perp: Vec<f64> = w
        .iter()
        .zip(&cert.u_bar)
        .map(|(wi, ui)| wi - along * ui)
        .collect();
    let grad = grad_linear(w, data, loss);
    dot(&perp, &grad)
}
