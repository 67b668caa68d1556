//! Dense real matrices and leading singular pairs.
//!
//! Storage is plain row-major `f64`; problem sizes stay at desk scale, so
//! clarity wins over blocking or SIMD. The one nontrivial routine is
//! [`top_singular_triple`], which extracts the two leading singular values
//! and the leading singular vectors by power iteration on the Gram matrix,
//! with deflation for the second value.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: cannot multiply {a_rows}x{a_cols} by {b_rows}x{b_cols}")]
    DimensionMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error("entry buffer has length {got}, expected {rows}x{cols} = {expected}")]
    BadLength {
        got: usize,
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("matrix dimensions must be positive (got {rows}x{cols})")]
    EmptyShape { rows: usize, cols: usize },
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("zero matrix has no singular direction")]
    ZeroMatrix,
    #[error(
        "power iteration did not converge within {iters} iterations (residual {residual:.3e})"
    )]
    NoConvergence { iters: usize, residual: f64 },
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from a row-major entry buffer, validating shape and
    /// finiteness.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyShape { rows, cols });
        }
        if entries.len() != rows * cols {
            return Err(LinalgError::BadLength {
                got: entries.len(),
                rows,
                cols,
                expected: rows * cols,
            });
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(LinalgError::EmptyShape {
                rows: rows.len(),
                cols: rows.first().map_or(0, Vec::len),
            });
        }
        let cols = rows[0].len();
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(LinalgError::BadLength {
                    got: r.len(),
                    rows: rows.len(),
                    cols,
                    expected: cols,
                });
            }
            entries.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, entries)
    }

    /// Column vector (n x 1) from a slice.
    pub fn column(v: &[f64]) -> Self {
        Self::new(v.len(), 1, v.to_vec()).expect("finite column vector")
    }

    /// Row vector (1 x n) from a slice.
    pub fn row_vector(v: &[f64]) -> Self {
        Self::new(1, v.len(), v.to_vec()).expect("finite row vector")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.cols + j] = v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| c * e).collect(),
        }
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "shape mismatch in add"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Elementwise difference; shapes must match.
    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "shape mismatch in sub"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Matrix-vector product; `v.len()` must equal `cols`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec length mismatch");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            out[i] = dot(self.row(i), v);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| *e == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.abs()))
    }
}

/// u v^T as a rows(u) x rows(v) matrix.
pub fn outer(u: &[f64], v: &[f64]) -> Matrix {
    Matrix::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
}

/// m^T m.
pub fn gram_right(m: &Matrix) -> Matrix {
    let mut g = Matrix::zeros(m.cols(), m.cols());
    for i in 0..m.cols() {
        for j in i..m.cols() {
            let mut s = 0.0;
            for r in 0..m.rows() {
                s += m.get(r, i) * m.get(r, j);
            }
            g.set(i, j, s);
            g.set(j, i, s);
        }
    }
    g
}

/// m m^T.
pub fn gram_left(m: &Matrix) -> Matrix {
    let mut g = Matrix::zeros(m.rows(), m.rows());
    for i in 0..m.rows() {
        for j in i..m.rows() {
            let s = dot(m.row(i), m.row(j));
            g.set(i, j, s);
            g.set(j, i, s);
        }
    }
    g
}

/// Dense product a*b; the only fallible shape check exposed as an error
/// because callers feed it user-controlled shapes.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.cols != b.rows {
        return Err(LinalgError::DimensionMismatch {
            a_rows: a.rows,
            a_cols: a.cols,
            b_rows: b.rows,
            b_cols: b.cols,
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                let v = out.get(i, j) + aik * b.get(k, j);
                out.set(i, j, v);
            }
        }
    }
    Ok(out)
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn vec_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = vec_norm(v);
    assert!(n > 0.0, "cannot normalize the zero vector");
    v.iter().map(|x| x / n).collect()
}

/// Leading singular pair plus the second singular value.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularTriple {
    pub sigma1: f64,
    /// Left singular vector, length = rows, unit norm.
    pub u: Vec<f64>,
    /// Right singular vector, length = cols, unit norm; its first nonzero
    /// component is positive.
    pub v: Vec<f64>,
    pub sigma2: f64,
    /// Set when sigma1 and sigma2 coincide within tolerance, in which case
    /// u and v only identify the top singular subspace, not a direction.
    pub degenerate: bool,
}

const POWER_MAX_ITERS: usize = 60_000;

/// Largest eigenpair of a symmetric PSD matrix by power iteration with
/// Rayleigh-quotient convergence. `orth` is re-projected out every
/// iteration so deflated calls stay in the complement; `residual_floor`
/// is an absolute residual level treated as converged, set by the caller
/// to the rounding-noise scale of how `g` was formed.
fn power_top_eig(
    g: &Matrix,
    reltol: f64,
    orth: Option<&[f64]>,
    residual_floor: f64,
) -> Result<(f64, Vec<f64>), LinalgError> {
    let n = g.rows();
    debug_assert_eq!(n, g.cols());

    let project = |w: &mut [f64]| {
        if let Some(q) = orth {
            let c = dot(w, q);
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= c * qi;
            }
        }
    };

    // Two deterministic starts: one from the diagonal with an index dither,
    // one pseudo-random, so a start accidentally orthogonal to the top
    // eigenvector cannot go unnoticed.
    let scale = (g.entries().iter().map(|e| e * e).sum::<f64>() / (n * n) as f64)
        .sqrt()
        .max(1.0);
    let start_a: Vec<f64> = (0..n)
        .map(|j| g.get(j, j).max(0.0).sqrt() + scale * (0.37 + 0.11 * j as f64))
        .collect();
    let mut rng_state = 0x9E37_79B9_7F4A_7C15_u64 ^ (n as u64);
    let start_b: Vec<f64> = (0..n)
        .map(|_| {
            // SplitMix64 step, mapped to (-1, 1).
            rng_state = rng_state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = rng_state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last_residual = f64::INFINITY;
    for start in [start_a, start_b] {
        let mut w = start;
        project(&mut w);
        let nrm = vec_norm(&w);
        if nrm == 0.0 {
            continue;
        }
        for wi in &mut w {
            *wi /= nrm;
        }
        let mut converged = None;
        for _ in 0..POWER_MAX_ITERS {
            let mut gw = g.matvec(&w);
            project(&mut gw);
            let lambda = dot(&w, &gw);
            let residual = {
                let mut s = 0.0;
                for (gwi, wi) in gw.iter().zip(&w) {
                    let d = gwi - lambda * wi;
                    s += d * d;
                }
                s.sqrt()
            };
            if residual <= (reltol * lambda).max(residual_floor) {
                converged = Some((lambda.max(0.0), w.clone()));
                break;
            }
            last_residual = residual;
            let gw_norm = vec_norm(&gw);
            if gw_norm <= f64::MIN_POSITIVE * 1e4 {
                // w is (numerically) in the kernel: eigenvalue 0, and the
                // residual test above already failed only because lambda
                // may be negative noise.
                converged = Some((0.0, w.clone()));
                break;
            }
            for (wi, gwi) in w.iter_mut().zip(&gw) {
                *wi = gwi / gw_norm;
            }
        }
        if let Some((lambda, w)) = converged {
            match &best {
                Some((best_lambda, _)) if *best_lambda >= lambda => {}
                _ => best = Some((lambda, w)),
            }
        }
    }
    best.ok_or(LinalgError::NoConvergence {
        iters: POWER_MAX_ITERS,
        residual: last_residual,
    })
}

/// Top singular value/vectors plus the second singular value (by deflation).
///
/// The returned pair satisfies `||m v - sigma1 u|| <= tol * sigma1` and the
/// matching left relation; repeated calls are bitwise deterministic. The
/// sign convention makes the first nonzero component of `v` positive.
pub fn top_singular_triple(m: &Matrix, tol: f64) -> Result<SingularTriple, LinalgError> {
    if m.is_zero() {
        return Err(LinalgError::ZeroMatrix);
    }
    assert!(tol > 0.0, "tolerance must be positive");

    // Iterate on the smaller Gram matrix.
    let use_right = m.cols() <= m.rows();
    let g = if use_right {
        gram_right(m)
    } else {
        gram_left(m)
    };

    let top_floor = 1e-13 * frobenius_norm(&g) * g.rows() as f64;
    let (lambda1, w1) = power_top_eig(&g, tol, None, top_floor)?;
    let (sigma1, mut u, mut v) = if use_right {
        let mv = m.matvec(&w1);
        let s = vec_norm(&mv);
        (s, mv.iter().map(|x| x / s).collect::<Vec<_>>(), w1.clone())
    } else {
        let mtv = m.transpose().matvec(&w1);
        let s = vec_norm(&mtv);
        (s, w1.clone(), mtv.iter().map(|x| x / s).collect::<Vec<_>>())
    };
    debug_assert!(sigma1 > 0.0);

    let min_side = m.rows().min(m.cols());
    let sigma2 = if min_side == 1 {
        0.0
    } else {
        // The deflated matrix carries cancellation noise at the scale of
        // lambda1; below that level the matrix is numerically rank one.
        let deflated = g.sub(&outer(&w1, &w1).scale(lambda1));
        let noise = 1e-13 * lambda1 * g.rows() as f64;
        if frobenius_norm(&deflated) <= noise {
            0.0
        } else {
            let (lambda2, _) = power_top_eig(&deflated, tol, Some(&w1), noise)?;
            lambda2.max(0.0).sqrt().min(sigma1)
        }
    };

    // Sign convention: first nonzero component of v positive.
    let v_scale = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * v_scale) {
        if *first < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
            for x in &mut u {
                *x = -*x;
            }
        }
    }

    let degenerate = sigma1 - sigma2 <= tol * sigma1;
    Ok(SingularTriple {
        sigma1,
        u,
        v,
        sigma2,
        degenerate,
    })
}

/// Spectral norm: sigma1 of the matrix, 0 for the zero matrix.
pub fn spectral_norm(m: &Matrix, tol: f64) -> Result<f64, LinalgError> {
    if m.is_zero() {
        return Ok(0.0);
    }
    Ok(top_singular_triple(m, tol)?.sigma1)
}
