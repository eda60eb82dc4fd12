use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter levels tried in order when a kernel matrix fails to factor.
pub const JITTER_LEVELS: [f64; 3] = [1e-6, 1e-4, 1e-2];

/// Lower Cholesky factor of `a + level * mean_diag * I`, escalating through
/// the levels starting at `start`. Returns the factor and the absolute jitter
/// that succeeded.
pub fn jittered_cholesky(a: &DMatrix<f64>, start: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    let mean_diag = (a.trace() / n as f64).max(f64::MIN_POSITIVE);
    let mut tried = Vec::new();
    for level in JITTER_LEVELS.iter().copied().filter(|l| *l >= start) {
        let jitter = level * mean_diag;
        tried.push(jitter);
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c.unpack(), jitter));
        }
    }
    Err(Error::Numerical {
        message: format!("kernel matrix of size {n} is not positive definite"),
        jitter_levels: tried,
    })
}

/// Cholesky with a fixed, already-added diagonal.
pub fn cholesky(a: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    a.cholesky()
        .map(|c| c.unpack())
        .ok_or_else(|| Error::numerical(format!("{what} is not positive definite")))
}

/// `L⁻¹ B` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

pub fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

/// `L⁻ᵀ B` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

pub fn solve_lower_transpose_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// PSD test within a relative tolerance: factor `a + tol * scale * I`.
pub fn is_psd(a: &DMatrix<f64>, rel_tol: f64) -> bool {
    let n = a.nrows();
    let scale = a.diagonal().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] += rel_tol * scale;
    }
    m.cholesky().is_some()
}

pub fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}
