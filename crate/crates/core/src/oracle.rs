//! Slow reference implementations used to cross-check the fast paths.
//!
//! Nothing here shares code with what it verifies: singular values come from
//! a cyclic Jacobi eigensolver instead of power iteration, gradients from
//! central finite differences instead of the chain rule, and max-margin
//! directions from candidate enumeration plus an angular grid instead of the
//! dual solver. These routines are quadratic-to-cubic in places and meant
//! for test-sized inputs only.

use crate::linalg::{dot, frobenius_norm, gram_left, gram_right, vec_norm, Matrix};

/// Plain triple-loop matrix product.
pub fn matmul_naive(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows());
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with matching eigenvector columns.
pub fn jacobi_eigh(sym: &Matrix) -> (Vec<f64>, Matrix) {
    let n = sym.rows();
    assert_eq!(n, sym.cols(), "jacobi_eigh needs a square matrix");
    let mut a = sym.clone();
    let mut v = Matrix::identity(n);
    let scale = frobenius_norm(&a).max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q).powi(2);
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).partial_cmp(&a.get(i, i)).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let eigvecs = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    (eigvals, eigvecs)
}

/// All singular values of a matrix, descending, via Jacobi on the smaller
/// Gram matrix.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let g = if m.cols() <= m.rows() {
        gram_right(m)
    } else {
        gram_left(m)
    };
    let (eigvals, _) = jacobi_eigh(&g);
    eigvals.iter().map(|l| l.max(0.0).sqrt()).collect()
}

/// Full thin SVD via the Jacobi eigensolver on m^T m. Columns of `u` for
/// (numerically) zero singular values are left as zero vectors.
pub fn svd(m: &Matrix) -> (Vec<f64>, Matrix, Matrix) {
    let g = gram_right(m);
    let (eigvals, v) = jacobi_eigh(&g);
    let sigmas: Vec<f64> = eigvals.iter().map(|l| l.max(0.0).sqrt()).collect();
    let mut u = Matrix::zeros(m.rows(), sigmas.len());
    let floor = 1e-13
        * sigmas
            .first()
            .copied()
            .unwrap_or(0.0)
            .max(f64::MIN_POSITIVE);
    for (j, sigma) in sigmas.iter().enumerate() {
        if *sigma <= floor {
            continue;
        }
        let vj: Vec<f64> = (0..v.rows()).map(|i| v.get(i, j)).collect();
        let mv = m.matvec(&vj);
        for i in 0..m.rows() {
            u.set(i, j, mv[i] / sigma);
        }
    }
    (sigmas, u, v)
}

/// Rank of a matrix by Gaussian elimination with partial pivoting.
pub fn rank(m: &Matrix, reltol: f64) -> usize {
    let mut a = m.clone();
    let (rows, cols) = (a.rows(), a.cols());
    let scale = a.max_abs();
    if scale == 0.0 {
        return 0;
    }
    let tol = reltol * scale;
    let mut rank = 0;
    let mut pivot_row = 0;
    for col in 0..cols {
        let mut best = pivot_row;
        for r in pivot_row..rows {
            if a.get(r, col).abs() > a.get(best, col).abs() {
                best = r;
            }
        }
        if pivot_row >= rows || a.get(best, col).abs() <= tol {
            continue;
        }
        if best != pivot_row {
            for c in 0..cols {
                let tmp = a.get(pivot_row, c);
                a.set(pivot_row, c, a.get(best, c));
                a.set(best, c, tmp);
            }
        }
        let p = a.get(pivot_row, col);
        for r in (pivot_row + 1)..rows {
            let f = a.get(r, col) / p;
            if f != 0.0 {
                for c in col..cols {
                    let val = a.get(r, c) - f * a.get(pivot_row, c);
                    a.set(r, c, val);
                }
            }
        }
        rank += 1;
        pivot_row += 1;
    }
    rank
}

pub use model_oracles::*;
mod model_oracles {
    use super::*;
    use crate::model::{grad_layer, risk, risk_linear, Dataset, Loss, NetworkParams};

    /// Central finite differences of the linear-predictor risk.
    pub fn finite_diff_linear_gradient(w: &[f64], data: &Dataset, loss: &Loss, h: f64) -> Vec<f64> {
        let mut grad = vec![0.0; w.len()];
        let mut probe = w.to_vec();
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = risk_linear(&probe, data, loss);
            probe[i] = orig - h;
            let minus = risk_linear(&probe, data, loss);
            probe[i] = orig;
            *g = (plus - minus) / (2.0 * h);
        }
        grad
    }

    /// Central finite differences of the network risk with respect to one
    /// layer, entry by entry.
    pub fn finite_diff_layer_gradient(
        params: &NetworkParams,
        k: usize,
        data: &Dataset,
        loss: &Loss,
        h: f64,
    ) -> Matrix {
        let layer = params.layer(k);
        let mut grad = Matrix::zeros(layer.rows(), layer.cols());
        for i in 0..layer.rows() {
            for j in 0..layer.cols() {
                let mut probe = params.clone();
                let orig = probe.layer(k).get(i, j);
                probe.layer_mut(k).set(i, j, orig + h);
                let plus = risk(&probe, data, loss);
                probe.layer_mut(k).set(i, j, orig - h);
                let minus = risk(&probe, data, loss);
                grad.set(i, j, (plus - minus) / (2.0 * h));
            }
        }
        grad
    }

    /// Worst relative error between the analytic layer gradients and central
    /// finite differences, over all layers and entries.
    pub fn max_gradient_rel_error(
        params: &NetworkParams,
        data: &Dataset,
        loss: &Loss,
        h: f64,
    ) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 1..=params.depth() {
            let analytic = grad_layer(params, k, data, loss);
            let numeric = finite_diff_layer_gradient(params, k, data, loss, h);
            let scale = analytic.max_abs().max(numeric.max_abs()).max(1e-8);
            for (a, b) in analytic.entries().iter().zip(numeric.entries()) {
                worst = worst.max((a - b).abs() / scale);
            }
        }
        worst
    }

    /// Best margin over candidate directions for 2-D data: every single
    /// signed point direction, every equal-margin direction of a pair, and a
    /// fine angular grid. Returns (margin, direction).
    pub fn svm_brute_force_2d(data: &Dataset, grid_step_rad: f64) -> (f64, [f64; 2]) {
        assert_eq!(data.dim(), 2, "brute-force oracle is 2-D only");
        let z: Vec<&[f64]> = (0..data.len()).map(|i| data.signed(i)).collect();
        let margin_of = |u: &[f64; 2]| -> f64 {
            z.iter()
                .map(|zi| u[0] * zi[0] + u[1] * zi[1])
                .fold(f64::INFINITY, f64::min)
        };

        let mut candidates: Vec<[f64; 2]> = Vec::new();
        for zi in &z {
            let n = (zi[0] * zi[0] + zi[1] * zi[1]).sqrt();
            if n > 0.0 {
                candidates.push([zi[0] / n, zi[1] / n]);
            }
        }
        for i in 0..z.len() {
            for j in (i + 1)..z.len() {
                // Directions with equal margin on i and j are orthogonal to
                // z_i - z_j.
                let d = [z[i][0] - z[j][0], z[i][1] - z[j][1]];
                let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
                if n > 1e-15 {
                    candidates.push([-d[1] / n, d[0] / n]);
                    candidates.push([d[1] / n, -d[0] / n]);
                }
            }
        }
        let steps = (std::f64::consts::TAU / grid_step_rad).ceil() as usize;
        for s in 0..steps {
            let theta = s as f64 * grid_step_rad;
            candidates.push([theta.cos(), theta.sin()]);
        }

        let mut best = (f64::NEG_INFINITY, [1.0, 0.0]);
        for u in candidates {
            let m = margin_of(&u);
            if m > best.0 {
                best = (m, u);
            }
        }
        best
    }

    /// Grid evaluation of the spread constant
    /// min over unit xi orthogonal to u_bar of max over support of <xi, z_i>,
    /// for dimensions 2 and 3 where the orthogonal sphere is 0- or
    /// 1-dimensional.
    pub fn spread_alpha_grid(
        data: &Dataset,
        u_bar: &[f64],
        support: &[usize],
        grid_step_rad: f64,
    ) -> f64 {
        let d = data.dim();
        assert!(d == 2 || d == 3, "grid oracle covers d = 2 or 3 only");
        let basis = orthonormal_complement(u_bar);
        let objective = |xi: &[f64]| -> f64 {
            support
                .iter()
                .map(|&i| dot(xi, data.signed(i)))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        if d == 2 {
            let b = &basis[0];
            let neg: Vec<f64> = b.iter().map(|x| -x).collect();
            objective(b).min(objective(&neg))
        } else {
            let (b0, b1) = (&basis[0], &basis[1]);
            let steps = (std::f64::consts::TAU / grid_step_rad).ceil() as usize;
            let mut best = f64::INFINITY;
            for s in 0..steps {
                let theta = s as f64 * grid_step_rad;
                let (c, sn) = (theta.cos(), theta.sin());
                let xi: Vec<f64> = b0.iter().zip(b1).map(|(a, b)| c * a + sn * b).collect();
                best = best.min(objective(&xi));
            }
            best
        }
    }

    /// Orthonormal basis of the complement of span(u), via Gram-Schmidt over
    /// the coordinate vectors.
    pub fn orthonormal_complement(u: &[f64]) -> Vec<Vec<f64>> {
        let d = u.len();
        let mut basis: Vec<Vec<f64>> = vec![u.to_vec()];
        for j in 0..d {
            if basis.len() == d {
                break;
            }
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            for b in &basis {
                let c = dot(&e, b);
                for (ei, bi) in e.iter_mut().zip(b) {
                    *ei -= c * bi;
                }
            }
            let n = vec_norm(&e);
            if n > 1e-9 {
                basis.push(e.iter().map(|x| x / n).collect());
            }
        }
        assert_eq!(basis.len(), u.len(), "complement construction failed");
        basis.remove(0);
        basis
    }
}
