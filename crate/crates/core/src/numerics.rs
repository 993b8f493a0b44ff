//! Dense symmetric-positive-definite linear algebra.
//!
//! Every inverse that appears in the estimator is realized through a
//! Cholesky factor of `A + jI`, where `j` is the first entry of a jitter
//! ladder for which the factorization succeeds. Gram matrices built on
//! clustered trajectory points are routinely near-singular, so the ladder
//! is scaled by the mean diagonal of the input.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ladder of diagonal shifts tried in order until a factorization succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct JitterPolicy {
    pub ladder: Vec<f64>,
    /// Multiply every ladder entry by the mean diagonal of the input.
    pub relative: bool,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            ladder: vec![0.0, 1e-10, 1e-8, 1e-6, 1e-4],
            relative: true,
        }
    }
}

impl JitterPolicy {
    /// Absolute ladder, used as given.
    pub fn absolute(ladder: Vec<f64>) -> Self {
        Self {
            ladder,
            relative: false,
        }
    }

    /// Only the exact matrix; no shift.
    pub fn exact() -> Self {
        Self::absolute(vec![0.0])
    }
}

/// Lower-triangular Cholesky factor of `A + jitter_used * I`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
    jitter_used: f64,
}

impl SpdFactor {
    pub fn dimension(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// `L Lᵀ`, i.e. the matrix that was actually factored.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: rhs.len(),
            });
        }
        let mut x = rhs.clone();
        forward_substitute(&self.lower, x.as_mut_slice());
        backward_substitute_transposed(&self.lower, x.as_mut_slice());
        Ok(x)
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: rhs.nrows(),
            });
        }
        let mut x = rhs.clone();
        for mut col in x.column_iter_mut() {
            let col = col.as_mut_slice();
            forward_substitute(&self.lower, col);
            backward_substitute_transposed(&self.lower, col);
        }
        Ok(x)
    }

    /// Solves `L z = rhs` only. `‖z‖²` is then `rhsᵀ (A + jI)⁻¹ rhs`.
    pub fn half_solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: rhs.len(),
            });
        }
        let mut z = rhs.clone();
        forward_substitute(&self.lower, z.as_mut_slice());
        Ok(z)
    }

    /// Column-wise `L⁻¹ rhs`.
    pub fn half_solve_mat(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: rhs.nrows(),
            });
        }
        let mut z = rhs.clone();
        for mut col in z.column_iter_mut() {
            forward_substitute(&self.lower, col.as_mut_slice());
        }
        Ok(z)
    }

    /// Explicit `(A + jI)⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dimension();
        let l = self.lower.as_slice();
        // W = L⁻¹, lower triangular; column j is zero above row j.
        let mut w = vec![0.0f64; n * n];
        for j in 0..n {
            let col = &mut w[j * n..(j + 1) * n];
            col[j] = 1.0;
            for k in j..n {
                let xk = col[k] / l[k * n + k];
                col[k] = xk;
                if xk != 0.0 {
                    for (c, v) in col[k + 1..].iter_mut().zip(&l[k * n + k + 1..(k + 1) * n]) {
                        *c -= v * xk;
                    }
                }
            }
        }
        // (A + jI)⁻¹ = WᵀW.
        let mut inv = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in i..n {
                let v = dot(&w[i * n + k..(i + 1) * n], &w[k * n + k..(k + 1) * n]);
                inv[(i, k)] = v;
                inv[(k, i)] = v;
            }
        }
        inv
    }

    /// `log det (A + jI) = 2 Σ ln L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Factors `matrix + j I` for the smallest ladder entry `j` that succeeds.
pub fn factor_spd(matrix: &DMatrix<f64>, policy: &JitterPolicy) -> Result<SpdFactor> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: matrix.ncols(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput("matrix"));
    }
    if !matrix.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteMatrix);
    }
    check_symmetric(matrix)?;

    let scale = if policy.relative {
        let mean_diag = matrix.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64;
        if mean_diag > 0.0 {
            mean_diag
        } else {
            1.0
        }
    } else {
        1.0
    };

    let mut last = 0.0;
    for &step in &policy.ladder {
        let jitter = step * scale;
        last = jitter;
        if let Some(lower) = cholesky(matrix, jitter) {
            return Ok(SpdFactor {
                lower,
                jitter_used: jitter,
            });
        }
    }
    Err(Error::FactorizationFailed { last_jitter: last })
}

/// Convenience wrapper: factor with the default ladder and solve one system.
pub fn solve_spd(factor: &SpdFactor, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    factor.solve_vec(rhs)
}

pub fn log_det(factor: &SpdFactor) -> f64 {
    factor.log_det()
}

fn check_symmetric(matrix: &DMatrix<f64>) -> Result<()> {
    let n = matrix.nrows();
    let max_abs = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut asym = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * max_abs.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Cholesky-Crout on the lower triangle of `a + shift I`.
///
/// A pivot is accepted only if it exceeds `EPSILON` times the corresponding
/// shifted diagonal entry; anything smaller is rank deficiency in disguise.
fn cholesky(a: &DMatrix<f64>, shift: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    // Column-major, left-looking: column j receives one axpy per earlier column.
    let mut l = vec![0.0f64; n * n];
    for j in 0..n {
        let (done, rest) = l.split_at_mut(j * n);
        let col_j = &mut rest[j..n];
        for (c, i) in col_j.iter_mut().zip(j..n) {
            *c = a[(i, j)];
        }
        col_j[0] += shift;
        let diag_entry = col_j[0];
        let mut k = 0;
        while k + 4 <= j {
            let c0 = &done[k * n + j..(k + 1) * n];
            let c1 = &done[(k + 1) * n + j..(k + 2) * n];
            let c2 = &done[(k + 2) * n + j..(k + 3) * n];
            let c3 = &done[(k + 3) * n + j..(k + 4) * n];
            let (a0, a1, a2, a3) = (c0[0], c1[0], c2[0], c3[0]);
            let cols = c0.iter().zip(c1).zip(c2.iter().zip(c3));
            for (c, ((v0, v1), (v2, v3))) in col_j.iter_mut().zip(cols) {
                *c -= (a0 * v0 + a1 * v1) + (a2 * v2 + a3 * v3);
            }
            k += 4;
        }
        for k in k..j {
            let col_k = &done[k * n + j..(k + 1) * n];
            let ljk = col_k[0];
            for (c, v) in col_j.iter_mut().zip(col_k) {
                *c -= ljk * v;
            }
        }
        let pivot = col_j[0];
        if !pivot.is_finite() || pivot <= 0.0 || pivot <= f64::EPSILON * diag_entry.abs() {
            return None;
        }
        let ljj = pivot.sqrt();
        col_j[0] = ljj;
        for c in &mut col_j[1..] {
            *c /= ljj;
        }
    }
    Some(DMatrix::from_vec(n, n, l))
}

/// Eight independent partial sums so the loop vectorizes; the summation
/// order is fixed, so results stay deterministic.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn forward_substitute(l: &DMatrix<f64>, x: &mut [f64]) {
    let n = x.len();
    for j in 0..n {
        let xj = x[j] / l[(j, j)];
        x[j] = xj;
        let col = l.column(j);
        for i in (j + 1)..n {
            x[i] -= col[i] * xj;
        }
    }
}

fn backward_substitute_transposed(l: &DMatrix<f64>, x: &mut [f64]) {
    let n = x.len();
    for j in (0..n).rev() {
        let col = &l.as_slice()[j * n..(j + 1) * n];
        let s = x[j] - dot(&col[j + 1..], &x[j + 1..]);
        x[j] = s / col[j];
    }
}
