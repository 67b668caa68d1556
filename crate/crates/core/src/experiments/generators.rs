//! Synthetic separable datasets: margin-controlled blobs around a hidden
//! direction, and two mirrored circles.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{dot, normalize, vec_norm};
use crate::model::{Dataset, ModelError};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("margin must lie strictly between 0 and 1 (got {margin})")]
    BadMargin { margin: f64 },
    #[error("separation must be positive (got {separation})")]
    BadSeparation { separation: f64 },
    #[error("need at least {min} points (got {n})")]
    TooFewPoints { n: usize, min: usize },
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Blobs dataset plus the hidden direction it was built around, kept for
/// cross-checks against the solved max-margin direction.
#[derive(Debug, Clone)]
pub struct GeneratedBlobs {
    pub dataset: Dataset,
    pub hidden_direction: Vec<f64>,
}

/// Separable points in the unit ball with margin at least `margin` along a
/// hidden random unit direction. Signed distances along the hidden
/// direction pile up near the margin (squared-uniform spacing) while the
/// orthogonal components spread widely, so the solved support set generically
/// has one support vector per dimension.
pub fn gen_separable_blobs(
    n: usize,
    d: usize,
    margin: f64,
    seed: u64,
) -> Result<GeneratedBlobs, GeneratorError> {
    if !(margin > 0.0 && margin < 1.0) {
        return Err(GeneratorError::BadMargin { margin });
    }
    if d == 0 {
        return Err(GeneratorError::ZeroDim);
    }
    if n == 0 {
        return Err(GeneratorError::TooFewPoints { n, min: 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = random_unit(d, &mut rng);

    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        let along = margin + (0.9 - margin).max(0.0) * rng.random::<f64>().powi(2);
        let mut x: Vec<f64> = hidden.iter().map(|h| along * h).collect();
        if d > 1 {
            // Random direction orthogonal to the hidden one.
            let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let c = dot(&raw, &hidden);
            let perp: Vec<f64> = raw.iter().zip(&hidden).map(|(r, h)| r - c * h).collect();
            let norm = vec_norm(&perp);
            if norm > 1e-9 {
                let cap = (1.0 - along * along).sqrt() * 0.95;
                let radius = cap * (0.3 + 0.7 * rng.random::<f64>());
                for (xj, pj) in x.iter_mut().zip(&perp) {
                    *xj += radius * pj / norm;
                }
            }
        }
        points.push(x.iter().map(|c| label * c).collect());
        labels.push(label);
    }
    Ok(GeneratedBlobs {
        dataset: Dataset::new(points, labels)?,
        hidden_direction: hidden,
    })
}

/// Two circles of radius 0.25 in the plane, mirrored across the vertical
/// axis and scaled into the unit ball. The gap between the circles along
/// the horizontal axis is `separation` (before scaling); labels follow the
/// circles. The mirroring makes the configuration symmetric, so the
/// max-margin direction of the scaled data is the horizontal axis.
pub fn gen_two_circles(n: usize, separation: f64, seed: u64) -> Result<Dataset, GeneratorError> {
    if separation <= 0.0 {
        return Err(GeneratorError::BadSeparation { separation });
    }
    if n < 2 {
        return Err(GeneratorError::TooFewPoints { n, min: 2 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = 0.25;
    let center = separation / 2.0 + radius;
    let scale = 0.98 / (center + radius);

    let n_right = n.div_ceil(2);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n_right);
    for _ in 0..n_right {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        right.push([
            (center + radius * theta.cos()) * scale,
            radius * theta.sin() * scale,
        ]);
    }
    for p in &right {
        points.push(vec![p[0], p[1]]);
        labels.push(1.0);
    }
    for p in right.iter().take(n - n_right) {
        points.push(vec![-p[0], p[1]]);
        labels.push(-1.0);
    }
    Ok(Dataset::new(points, labels)?)
}

fn random_unit(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if vec_norm(&raw) > 1e-6 {
            return normalize(&raw);
        }
    }
}
