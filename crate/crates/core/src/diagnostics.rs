//! Alignment, imbalance, and margin diagnostics computed from a network
//! snapshot plus a margin certificate.
//!
//! The central quantities: per-layer alignment ratios ||W||_2 / ||W||_F
//! (1 exactly for rank-one matrices), adjacent-layer singular-vector
//! alignment |<v_{k+1}, u_k>|, direction cosines of the end-to-end
//! predictor against the max-margin direction, the layerwise margin
//! objective, and signed slacks of the rank-one/alignment bounds driven by
//! the initialization's imbalance constant.

use thiserror::Error;

use crate::dynamics::Mode;
use crate::geometry::MarginCertificate;
use crate::linalg::{
    dot, frobenius_norm, gram_left, gram_right, outer, spectral_norm, top_singular_triple,
    vec_norm, LinalgError, Matrix, SingularTriple,
};
use crate::model::{product, Dataset, NetworkParams};

/// Tolerance handed to the singular-pair extraction used by diagnostics.
const TRIPLE_TOL: f64 = 1e-11;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("metric undefined for a zero matrix")]
    ZeroMatrix,
    #[error("layer {k} is zero, so the normalized chain is undefined")]
    ZeroLayer { k: usize },
    #[error("end-to-end predictor is zero, so its direction is undefined")]
    ZeroProduct,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// ||m||_2 / ||m||_F in (0, 1]; equals 1 exactly when m has rank one.
pub fn alignment_ratio(m: &Matrix) -> Result<f64, DiagnosticsError> {
    if m.is_zero() {
        return Err(DiagnosticsError::ZeroMatrix);
    }
    let sigma1 = top_singular_triple(m, TRIPLE_TOL)?.sigma1;
    Ok((sigma1 / frobenius_norm(m)).min(1.0))
}

/// Frobenius distance between m / ||m||_F and its closest rank-one
/// approximation u v^T, evaluated by explicit subtraction. Identical to
/// sqrt(1 - alignment_ratio^2) up to extraction error.
pub fn rank_one_distance(m: &Matrix) -> Result<f64, DiagnosticsError> {
    if m.is_zero() {
        return Err(DiagnosticsError::ZeroMatrix);
    }
    let t = top_singular_triple(m, TRIPLE_TOL)?;
    let fro = frobenius_norm(m);
    let normalized = m.scale(1.0 / fro);
    let rank_one = outer(&t.u, &t.v);
    Ok(frobenius_norm(
        &normalized.sub(&rank_one.scale(t.sigma1 / fro)),
    ))
}

/// |<v_{k+1}, u_k>| together with a flag marking a degenerate top singular
/// space on either side (in which case the value only reflects an arbitrary
/// basis choice).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjacentAlignment {
    pub value: f64,
    pub degenerate: bool,
}

/// Alignment between the top right singular vector of layer k+1 and the
/// top left singular vector of layer k, 1 <= k < depth.
pub fn adjacent_alignment(
    w: &NetworkParams,
    k: usize,
) -> Result<AdjacentAlignment, DiagnosticsError> {
    assert!(k >= 1 && k < w.depth(), "needs a layer pair");
    let lower = layer_triple(w.layer(k))?.ok_or(DiagnosticsError::ZeroLayer { k })?;
    let upper = layer_triple(w.layer(k + 1))?.ok_or(DiagnosticsError::ZeroLayer { k: k + 1 })?;
    Ok(AdjacentAlignment {
        value: dot(&upper.v, &lower.u).abs(),
        degenerate: lower.degenerate || upper.degenerate,
    })
}

fn layer_triple(m: &Matrix) -> Result<Option<SingularTriple>, DiagnosticsError> {
    if m.is_zero() {
        return Ok(None);
    }
    Ok(Some(top_singular_triple(m, TRIPLE_TOL)?))
}

/// The initialization's imbalance constant
///
/// ```text
/// (max_k ||W_k(0)||_F^2) - ||W_L(0)||_F^2
///     + sum_{k<L} ||W_k(0) W_k(0)^T - W_{k+1}(0)^T W_{k+1}(0)||_2
/// ```
///
/// Zero for balanced starts; bounds how far any layer can stay from rank
/// one along a run.
pub fn imbalance_constant(w0: &NetworkParams) -> f64 {
    let fro_sq: Vec<f64> = w0
        .layers()
        .iter()
        .map(|m| frobenius_norm(m).powi(2))
        .collect();
    let max_fro_sq = fro_sq.iter().fold(0.0_f64, |a, b| a.max(*b));
    let mut d = max_fro_sq - fro_sq[w0.depth() - 1];
    for k in 1..w0.depth() {
        let gap = gram_left(w0.layer(k)).sub(&gram_right(w0.layer(k + 1)));
        d += spectral_norm(&gap, TRIPLE_TOL).expect("gap norm");
    }
    d
}

/// Signed slacks of the per-layer rank-one bound and the adjacent-alignment
/// bound. Nonnegative values mean the bounds hold; adjacent entries are
/// `None` when a layer is zero or its top singular space is degenerate.
#[derive(Debug, Clone)]
pub struct SlackReport {
    /// Per layer: bound - (||W_k||_F^2 - ||W_k||_2^2), with
    /// bound = D for flow and D + 2 risk0 for descent.
    pub norm_gap: Vec<f64>,
    /// Per adjacent pair: the squared alignment minus its lower bound
    /// 1 - (D' + ||W_{k+1}(0)||_2^2 + ||W_k(0)||_2^2) / ||W_{k+1}||_2^2,
    /// with D' = D for flow and D + 3 risk0 for descent.
    pub adjacent: Vec<Option<f64>>,
}

pub fn alignment_slacks(
    w: &NetworkParams,
    w0: &NetworkParams,
    mode: Mode,
    risk0: f64,
) -> Result<SlackReport, DiagnosticsError> {
    let d_const = imbalance_constant(w0);
    let (gap_bound, align_extra) = match mode {
        Mode::Flow => (d_const, d_const),
        Mode::Descent => (d_const + 2.0 * risk0, d_const + 3.0 * risk0),
    };

    let depth = w.depth();
    let triples: Vec<Option<SingularTriple>> = w
        .layers()
        .iter()
        .map(layer_triple)
        .collect::<Result<_, _>>()?;
    let init_spec: Vec<f64> = w0
        .layers()
        .iter()
        .map(|m| spectral_norm(m, TRIPLE_TOL).expect("initial layer norm"))
        .collect();

    let mut norm_gap = Vec::with_capacity(depth);
    for (k, triple) in triples.iter().enumerate() {
        let fro_sq = frobenius_norm(w.layer(k + 1)).powi(2);
        let spec_sq = triple.as_ref().map_or(0.0, |t| t.sigma1 * t.sigma1);
        norm_gap.push(gap_bound - (fro_sq - spec_sq));
    }

    let mut adjacent = Vec::with_capacity(depth - 1);
    for k in 1..depth {
        let (lower, upper) = (&triples[k - 1], &triples[k]);
        let slack = match (lower, upper) {
            (Some(lo), Some(up)) if !lo.degenerate && !up.degenerate => {
                let cos_sq = dot(&up.v, &lo.u).powi(2);
                let bound = 1.0
                    - (align_extra
                        + init_spec[k] * init_spec[k]
                        + init_spec[k - 1] * init_spec[k - 1])
                        / (up.sigma1 * up.sigma1);
                Some(cos_sq - bound)
            }
            _ => None,
        };
        adjacent.push(slack);
    }

    Ok(SlackReport { norm_gap, adjacent })
}

/// min_i y_i (W_L / ||W_L||_F) ... (W_1 / ||W_1||_F) x_i. Never exceeds the
/// max margin of the data; approaches it when layers align and the
/// predictor turns toward the max-margin direction.
pub fn margin_objective(w: &NetworkParams, data: &Dataset) -> Result<f64, DiagnosticsError> {
    let mut divisor = 1.0;
    for (k, layer) in w.layers().iter().enumerate() {
        let fro = frobenius_norm(layer);
        if fro == 0.0 {
            return Err(DiagnosticsError::ZeroLayer { k: k + 1 });
        }
        divisor *= fro;
    }
    let wp = product(w);
    Ok((0..data.len())
        .map(|i| dot(&wp, data.signed(i)) / divisor)
        .fold(f64::INFINITY, f64::min))
}

/// The three direction cosines of a snapshot: predictor against the first
/// layer's top right singular vector, predictor against the max-margin
/// direction (signed), and that singular vector against the max-margin
/// direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionCosines {
    /// |<w_prod / ||w_prod||, v_1>|.
    pub to_v1: f64,
    /// <w_prod / ||w_prod||, u_bar>, sign kept.
    pub to_max_margin: f64,
    /// |<v_1, u_bar>|.
    pub v1_to_max_margin: f64,
    /// v_1 came from a degenerate top singular space.
    pub degenerate: bool,
}

pub fn direction_cosines(
    w: &NetworkParams,
    cert: &MarginCertificate,
) -> Result<DirectionCosines, DiagnosticsError> {
    let wp = product(w);
    let norm = vec_norm(&wp);
    if norm == 0.0 {
        return Err(DiagnosticsError::ZeroProduct);
    }
    let unit: Vec<f64> = wp.iter().map(|x| x / norm).collect();
    let first = layer_triple(w.layer(1))?.ok_or(DiagnosticsError::ZeroLayer { k: 1 })?;
    Ok(DirectionCosines {
        to_v1: dot(&unit, &first.v).abs().min(1.0),
        to_max_margin: dot(&unit, &cert.u_bar).clamp(-1.0, 1.0),
        v1_to_max_margin: dot(&first.v, &cert.u_bar).abs().min(1.0),
        degenerate: first.degenerate,
    })
}

/// ||perp(W_1)||_F / ||W_1||_F, where perp projects each row of W_1 onto
/// the complement of the max-margin direction.
pub fn perp_mass(w1: &Matrix, cert: &MarginCertificate) -> Result<f64, DiagnosticsError> {
    let fro = frobenius_norm(w1);
    if fro == 0.0 {
        return Err(DiagnosticsError::ZeroMatrix);
    }
    let mut perp_sq = 0.0;
    for i in 0..w1.rows() {
        let row = w1.row(i);
        let along = dot(row, &cert.u_bar);
        for (rj, uj) in row.iter().zip(&cert.u_bar) {
            let p = rj - along * uj;
            perp_sq += p * p;
        }
    }
    Ok(perp_sq.sqrt() / fro)
}

/// Everything the trajectory record needs from one snapshot. Entries are
/// `None` where the metric is undefined (zero layer, zero predictor, or a
/// degenerate top singular space).
#[derive(Debug, Clone)]
pub struct AlignmentReport {
    pub ratios: Vec<Option<f64>>,
    pub adjacent: Vec<Option<f64>>,
    pub cos_v1: Option<f64>,
    pub cos_ubar: Option<f64>,
    pub cos_v1_ubar: Option<f64>,
    pub margin_objective: Option<f64>,
    pub perp_mass: Option<f64>,
    pub norm_gap_slacks: Vec<f64>,
    pub adjacent_slacks: Vec<Option<f64>>,
    /// ||gap_k(t) - gap_k(0)||_F per adjacent pair, where gap_k is the
    /// conserved quantity W_{k+1}^T W_{k+1} - W_k W_k^T.
    pub balancedness_residuals: Vec<f64>,
    /// Max pairwise drift of Frobenius-norm-square differences from the
    /// start; filled for descent snapshots.
    pub gd_drift: Option<f64>,
}

/// Computes the full per-snapshot report against the run's start `w0` and
/// the dataset's margin certificate.
pub fn snapshot_report(
    w: &NetworkParams,
    w0: &NetworkParams,
    data: &Dataset,
    cert: &MarginCertificate,
    mode: Mode,
    risk0: f64,
) -> Result<AlignmentReport, DiagnosticsError> {
    let depth = w.depth();
    let triples: Vec<Option<SingularTriple>> = w
        .layers()
        .iter()
        .map(layer_triple)
        .collect::<Result<_, _>>()?;

    let ratios: Vec<Option<f64>> = triples
        .iter()
        .enumerate()
        .map(|(k, t)| {
            t.as_ref()
                .map(|t| (t.sigma1 / frobenius_norm(w.layer(k + 1))).min(1.0))
        })
        .collect();

    let adjacent: Vec<Option<f64>> = (1..depth)
        .map(|k| match (&triples[k - 1], &triples[k]) {
            (Some(lo), Some(up)) if !lo.degenerate && !up.degenerate => {
                Some(dot(&up.v, &lo.u).abs().min(1.0))
            }
            _ => None,
        })
        .collect();

    let cosines = match direction_cosines(w, cert) {
        Ok(c) => Some(c),
        Err(
            DiagnosticsError::ZeroProduct
            | DiagnosticsError::ZeroLayer { .. }
            | DiagnosticsError::ZeroMatrix,
        ) => None,
        Err(e) => return Err(e),
    };
    let (cos_v1, cos_ubar, cos_v1_ubar) = match cosines {
        Some(c) if !c.degenerate => (
            Some(c.to_v1),
            Some(c.to_max_margin),
            Some(c.v1_to_max_margin),
        ),
        Some(c) => (None, Some(c.to_max_margin), None),
        None => (None, None, None),
    };

    let margin_obj = match margin_objective(w, data) {
        Ok(v) => Some(v),
        Err(DiagnosticsError::ZeroLayer { .. }) => None,
        Err(e) => return Err(e),
    };
    let perp = match perp_mass(w.layer(1), cert) {
        Ok(v) => Some(v),
        Err(DiagnosticsError::ZeroMatrix) => None,
        Err(e) => return Err(e),
    };

    let slacks = alignment_slacks(w, w0, mode, risk0)?;

    let balancedness_residuals: Vec<f64> = (1..depth)
        .map(|k| {
            let now = gram_right(w.layer(k + 1)).sub(&gram_left(w.layer(k)));
            let then = gram_right(w0.layer(k + 1)).sub(&gram_left(w0.layer(k)));
            frobenius_norm(&now.sub(&then))
        })
        .collect();

    let gd_drift = match mode {
        Mode::Descent => {
            let sq: Vec<f64> = w
                .layers()
                .iter()
                .map(|m| frobenius_norm(m).powi(2))
                .collect();
            let sq0: Vec<f64> = w0
                .layers()
                .iter()
                .map(|m| frobenius_norm(m).powi(2))
                .collect();
            let mut worst = 0.0_f64;
            for k in 0..depth {
                for j in (k + 1)..depth {
                    worst = worst.max(((sq[k] - sq[j]) - (sq0[k] - sq0[j])).abs());
                }
            }
            Some(worst)
        }
        Mode::Flow => None,
    };

    Ok(AlignmentReport {
        ratios,
        adjacent,
        cos_v1,
        cos_ubar,
        cos_v1_ubar,
        margin_objective: margin_obj,
        perp_mass: perp,
        norm_gap_slacks: slacks.norm_gap,
        adjacent_slacks: slacks.adjacent,
        balancedness_residuals,
        gd_drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::svm_solve;
    use crate::model::{init_balanced, Loss};
    use crate::oracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn separable_2d() -> Dataset {
        Dataset::new(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.5, 0.5]],
            vec![1.0, -1.0, 1.0],
        )
        .unwrap()
    }

    /// Mirrored pair whose max-margin direction is exactly e1.
    fn axis_pair() -> Dataset {
        Dataset::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1.0, -1.0]).unwrap()
    }

    #[test]
    fn ratio_of_rank_one_is_unity() {
        let m = outer(&[1.0, 2.0, -0.5], &[0.3, 0.4]);
        assert!((alignment_ratio(&m).unwrap() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn ratio_of_identity() {
        let m = Matrix::identity(2);
        assert!((alignment_ratio(&m).unwrap() - 1.0 / 2.0_f64.sqrt()).abs() <= 1e-10);
    }

    #[test]
    fn ratio_rejects_zero() {
        assert!(matches!(
            alignment_ratio(&Matrix::zeros(2, 2)),
            Err(DiagnosticsError::ZeroMatrix)
        ));
    }

    #[test]
    fn ratio_matches_jacobi_oracle() {
        let m = Matrix::from_fn(4, 3, |i, j| ((2 * i + 3 * j) as f64).sin() + 0.2);
        let ratio = alignment_ratio(&m).unwrap();
        let sigmas = oracle::singular_values(&m);
        let expected = sigmas[0] / sigmas.iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!((ratio - expected).abs() <= 1e-9);
    }

    #[test]
    fn rank_one_distance_identity() {
        for seed in 0..5_u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::Rng;
            let m = Matrix::from_fn(4, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let ratio = alignment_ratio(&m).unwrap();
            let direct = rank_one_distance(&m).unwrap();
            assert!(
                ((1.0 - ratio * ratio).sqrt() - direct).abs() <= 1e-8,
                "ratio {ratio}, direct {direct}"
            );
        }
    }

    #[test]
    fn ratio_is_one_iff_second_sigma_vanishes() {
        let rank_one = outer(&[2.0, -1.0], &[0.5, 0.5, 0.1]);
        let t = top_singular_triple(&rank_one, 1e-11).unwrap();
        assert!(t.sigma2 <= 1e-10);
        assert!((alignment_ratio(&rank_one).unwrap() - 1.0).abs() <= 1e-10);

        let rank_two = rank_one.add(&outer(&[1.0, 2.0], &[-0.5, 0.5, 0.0]));
        let t2 = top_singular_triple(&rank_two, 1e-11).unwrap();
        assert!(t2.sigma2 > 1e-6);
        assert!(alignment_ratio(&rank_two).unwrap() < 1.0 - 1e-6);
    }

    #[test]
    fn adjacent_alignment_balanced_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = init_balanced(&[3, 4, 2, 1], 1.0, &mut rng).unwrap();
        for k in 1..3 {
            let a = adjacent_alignment(&w, k).unwrap();
            assert!(!a.degenerate);
            assert!((a.value - 1.0).abs() <= 1e-10, "pair {k}: {}", a.value);
        }
    }

    #[test]
    fn adjacent_alignment_orthogonal_construction() {
        let w1 = Matrix::new(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let w2 = Matrix::row_vector(&[0.0, 1.0]);
        let w = NetworkParams::new(vec![w1, w2]).unwrap();
        let a = adjacent_alignment(&w, 1).unwrap();
        assert!(a.value <= 1e-10);
    }

    #[test]
    fn adjacent_alignment_matches_svd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        use rand::Rng;
        let w1 = Matrix::from_fn(3, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let w2 = Matrix::from_fn(1, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let w = NetworkParams::new(vec![w1.clone(), w2.clone()]).unwrap();
        let a = adjacent_alignment(&w, 1).unwrap();
        let (_, u1, _) = oracle::svd(&w1);
        let (_, _, v2) = oracle::svd(&w2);
        let u1_top: Vec<f64> = (0..u1.rows()).map(|i| u1.get(i, 0)).collect();
        let v2_top: Vec<f64> = (0..v2.rows()).map(|i| v2.get(i, 0)).collect();
        assert!((a.value - dot(&u1_top, &v2_top).abs()).abs() <= 1e-9);
    }

    #[test]
    fn imbalance_zero_for_balanced_and_single_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let balanced = init_balanced(&[3, 2, 1], 0.7, &mut rng).unwrap();
        assert!(imbalance_constant(&balanced).abs() <= 1e-12);

        let single = NetworkParams::new(vec![Matrix::row_vector(&[0.3, 0.4])]).unwrap();
        assert!(imbalance_constant(&single).abs() <= 1e-15);
    }

    #[test]
    fn imbalance_matches_jacobi_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        use rand::Rng;
        let layers = vec![
            Matrix::from_fn(3, 2, |_, _| rng.random::<f64>() - 0.5),
            Matrix::from_fn(2, 3, |_, _| rng.random::<f64>() - 0.5),
            Matrix::from_fn(1, 2, |_, _| rng.random::<f64>() - 0.5),
        ];
        let w0 = NetworkParams::new(layers).unwrap();
        let got = imbalance_constant(&w0);

        let fro_sq: Vec<f64> = w0
            .layers()
            .iter()
            .map(|m| frobenius_norm(m).powi(2))
            .collect();
        let mut expected = fro_sq.iter().cloned().fold(0.0_f64, f64::max) - fro_sq[2];
        for k in 1..3 {
            let gap = gram_left(w0.layer(k)).sub(&gram_right(w0.layer(k + 1)));
            expected += oracle::singular_values(&gap)[0];
        }
        assert!((got - expected).abs() <= 1e-9);
    }

    #[test]
    fn margin_objective_attains_gamma_for_aligned_predictor() {
        let data = separable_2d();
        let cert = svm_solve(&data, 1e-8).unwrap();
        let w = NetworkParams::new(vec![Matrix::row_vector(&cert.u_bar)]).unwrap();
        let mo = margin_objective(&w, &data).unwrap();
        assert!((mo - cert.gamma).abs() <= 1e-8);
    }

    #[test]
    fn margin_objective_never_exceeds_gamma() {
        let data = separable_2d();
        let cert = svm_solve(&data, 1e-8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        use rand::Rng;
        for _ in 0..50 {
            let layers = vec![
                Matrix::from_fn(3, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0),
                Matrix::from_fn(1, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0),
            ];
            let w = NetworkParams::new(layers).unwrap();
            let mo = margin_objective(&w, &data).unwrap();
            assert!(
                mo <= cert.gamma + 1e-8,
                "objective {mo} above {}",
                cert.gamma
            );
        }
    }

    #[test]
    fn margin_objective_matches_compose_oracle() {
        let data = separable_2d();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        use rand::Rng;
        let layers = vec![
            Matrix::from_fn(2, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0),
            Matrix::from_fn(1, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0),
        ];
        let w = NetworkParams::new(layers).unwrap();
        let mo = margin_objective(&w, &data).unwrap();
        // Product-then-normalize route.
        let wp = product(&w);
        let divisor = frobenius_norm(w.layer(1)) * frobenius_norm(w.layer(2));
        let expected = (0..data.len())
            .map(|i| dot(&wp, data.signed(i)) / divisor)
            .fold(f64::INFINITY, f64::min);
        assert!((mo - expected).abs() <= 1e-12);
    }

    #[test]
    fn margin_objective_rejects_zero_layer() {
        let data = separable_2d();
        let w = NetworkParams::new(vec![Matrix::zeros(3, 2), Matrix::zeros(1, 3)]).unwrap();
        assert!(matches!(
            margin_objective(&w, &data),
            Err(DiagnosticsError::ZeroLayer { k: 1 })
        ));
    }

    #[test]
    fn cosines_for_aligned_single_layer() {
        let data = separable_2d();
        let cert = svm_solve(&data, 1e-8).unwrap();
        let scaled: Vec<f64> = cert.u_bar.iter().map(|x| 2.5 * x).collect();
        let w = NetworkParams::new(vec![Matrix::row_vector(&scaled)]).unwrap();
        let c = direction_cosines(&w, &cert).unwrap();
        assert!((c.to_v1 - 1.0).abs() <= 1e-9);
        assert!((c.to_max_margin - 1.0).abs() <= 1e-9);
        assert!((c.v1_to_max_margin - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn cosines_orthogonal_first_layer() {
        let data = axis_pair();
        let cert = svm_solve(&data, 1e-8).unwrap();
        // u_bar is e1 for this dataset; a row orthogonal to it.
        let w = NetworkParams::new(vec![Matrix::row_vector(&[0.0, 1.0])]).unwrap();
        let c = direction_cosines(&w, &cert).unwrap();
        assert!(c.v1_to_max_margin <= 1e-6);
        assert!(c.to_max_margin.abs() <= 1e-6);
    }

    #[test]
    fn cosines_match_dot_oracle() {
        let data = separable_2d();
        let cert = svm_solve(&data, 1e-8).unwrap();
        let w = NetworkParams::new(vec![
            Matrix::new(2, 2, vec![0.8, 0.1, -0.2, 0.5]).unwrap(),
            Matrix::row_vector(&[0.7, -0.3]),
        ])
        .unwrap();
        let c = direction_cosines(&w, &cert).unwrap();
        let wp = product(&w);
        let unit: Vec<f64> = wp.iter().map(|x| x / vec_norm(&wp)).collect();
        let v1 = top_singular_triple(w.layer(1), 1e-11).unwrap().v;
        assert!((c.to_v1 - dot(&unit, &v1).abs()).abs() <= 1e-10);
        assert!((c.to_max_margin - dot(&unit, &cert.u_bar)).abs() <= 1e-10);
        assert!((c.v1_to_max_margin - dot(&v1, &cert.u_bar).abs()).abs() <= 1e-10);
    }

    #[test]
    fn perp_mass_extremes_and_oracle() {
        let data = axis_pair();
        let cert = svm_solve(&data, 1e-8).unwrap();
        // Rows along u_bar: no orthogonal mass.
        let along = Matrix::from_rows(&[cert.u_bar.clone(), cert.u_bar.clone()]).unwrap();
        assert!(perp_mass(&along, &cert).unwrap() <= 1e-9);
        // Rows orthogonal to u_bar (= e1 here): full orthogonal mass.
        let across = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, -0.5]]).unwrap();
        assert!((perp_mass(&across, &cert).unwrap() - 1.0).abs() <= 1e-9);

        // Projector-matrix oracle on a random first layer.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        use rand::Rng;
        let w1 = Matrix::from_fn(3, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let got = perp_mass(&w1, &cert).unwrap();
        let u = &cert.u_bar;
        let proj = Matrix::from_fn(2, 2, |i, j| (if i == j { 1.0 } else { 0.0 }) - u[i] * u[j]);
        let projected = crate::linalg::matmul(&w1, &proj.transpose()).unwrap();
        let expected = frobenius_norm(&projected) / frobenius_norm(&w1);
        assert!((got - expected).abs() <= 1e-12);
    }

    #[test]
    fn slacks_nonnegative_at_balanced_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let w0 = init_balanced(&[2, 3, 1], 1.0, &mut rng).unwrap();
        let report = alignment_slacks(&w0, &w0, Mode::Flow, 2.0_f64.ln()).unwrap();
        for s in &report.norm_gap {
            assert!(*s >= -1e-10, "norm gap slack {s}");
        }
        for s in report.adjacent.iter().flatten() {
            assert!(*s >= -1e-10, "adjacent slack {s}");
        }
    }

    #[test]
    fn snapshot_report_handles_zero_first_layer() {
        let data = separable_2d();
        let loss = Loss::logistic();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let w0 = crate::model::init_zero_first_layer(&[2, 3, 1], 1.0, &mut rng).unwrap();
        let cert = svm_solve(&data, 1e-8).unwrap();
        let risk0 = crate::model::risk(&w0, &data, &loss);
        let report = snapshot_report(&w0, &w0, &data, &cert, Mode::Descent, risk0).unwrap();
        assert!(report.ratios[0].is_none());
        assert!(report.ratios[1].is_some());
        assert!(report.adjacent[0].is_none());
        assert!(report.cos_ubar.is_none());
        assert!(report.margin_objective.is_none());
        assert!(report.perp_mass.is_none());
        assert_eq!(report.gd_drift, Some(0.0));
        for r in &report.balancedness_residuals {
            assert_eq!(*r, 0.0);
        }
    }
}
