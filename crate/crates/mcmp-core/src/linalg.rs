//! Dense helpers shared by the filter synthesis and the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{McmpError, Result};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2) / 2.0
}

/// Replaces `m` with its symmetric part. Covariance recursions drift out of
/// symmetry by rounding; resymmetrizing each step keeps eigensolves stable.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// log(sum exp(x_i)) guarded against overflow. Empty input gives -inf.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    let s: f64 = xs.iter().map(|x| (x - mx).exp()).sum();
    mx + s.ln()
}

/// Square-root factorization of a symmetric PSD matrix, tolerating rank
/// deficiency: `m = factor * factor^T` with eigenvalues below a relative
/// floor clamped to zero.
///
/// The factor keeps one (possibly zero) column per dimension so that a draw
/// always consumes exactly `n` standard normals regardless of numeric rank;
/// reproducible streams rely on that fixed layout.
pub struct PsdFactor {
    pub factor: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
    pub rank: usize,
}

pub fn psd_factor(m: &DMatrix<f64>) -> Result<PsdFactor> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(McmpError::Numeric("psd_factor needs a square matrix".into()));
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let floor = lmax.max(1e-300) * 1e-12;
    if eig.eigenvalues.iter().any(|&l| l < -lmax.max(1e-12) * 1e-8) {
        return Err(McmpError::Numeric(format!(
            "matrix is not positive semidefinite (min eigenvalue {:.3e})",
            eig.eigenvalues.min()
        )));
    }
    let mut factor = DMatrix::zeros(n, n);
    let mut pinv = DMatrix::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        let l = eig.eigenvalues[k];
        if l > floor {
            rank += 1;
            let u = eig.eigenvectors.column(k);
            let s = l.sqrt();
            for i in 0..n {
                factor[(i, k)] = u[i] * s;
            }
            // pinv += u u^T / l
            for i in 0..n {
                for j in 0..n {
                    pinv[(i, j)] += u[i] * u[j] / l;
                }
            }
        }
    }
    Ok(PsdFactor { factor, pinv, rank })
}

/// Solves `a x = b` for symmetric positive definite `a`, falling back to an
/// eigen-based pseudo-inverse when Cholesky fails. Returns the solution and
/// the relative residual so callers can reject unreachable right hand sides.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let scale = b.norm().max(1.0);
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        let res = (a * &x - b).norm() / scale;
        return Ok((x, res));
    }
    let f = psd_factor(a)?;
    let x = &f.pinv * b;
    let res = (a * &x - b).norm() / scale;
    Ok((x, res))
}
