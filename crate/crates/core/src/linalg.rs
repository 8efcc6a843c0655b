//! Small dense helpers shared by the filters.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{numerical, Result};

/// Cholesky factor of a symmetric PD matrix. On failure a single jitter of
/// `1e-10 * trace / n` is added to the diagonal before giving up.
pub(crate) fn spd_factor(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol);
    }
    let n = m.nrows().max(1);
    let jitter = 1e-10 * m.trace().abs() / n as f64;
    let mut jittered = m.clone();
    for i in 0..m.nrows() {
        jittered[(i, i)] += jitter;
    }
    Cholesky::new(jittered).ok_or_else(|| numerical(format!("{what} is not positive definite")))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Clamp round-off negatives in `(-1e-12, 0)` to zero; anything more negative
/// means the covariance lost definiteness.
pub(crate) fn clamp_variance(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v > -1e-12 {
        Ok(0.0)
    } else {
        Err(numerical(format!("negative predictive variance {v:e}")))
    }
}
