use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::field::FieldGrid;

pub fn rmse_field(estimate: &FieldGrid, truth: &FieldGrid) -> Result<f64> {
    if estimate.spec != truth.spec {
        return Err(invalid("estimate and truth use different grids"));
    }
    rmse_slices(&estimate.values, &truth.values)
}

pub fn rmse_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(invalid(format!(
            "matrix shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    rmse_slices(a.as_slice(), b.as_slice())
}

pub fn rmse_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid("value lists differ in length"));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Rounds completed before the per-round change stays below `threshold` for
/// `window` consecutive rounds. `changes[i]` is the change made by round
/// `i + 1`. `None` when the trace never settles.
pub fn iterations_to_consensus(changes: &[f64], threshold: f64, window: usize) -> Option<usize> {
    let mut run = 0;
    for (i, c) in changes.iter().enumerate() {
        if *c < threshold {
            run += 1;
            if run == window {
                return Some(i + 1 - window);
            }
        } else {
            run = 0;
        }
    }
    None
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Least-squares polynomial fit of the given degree; returns the
/// coefficient of determination.
pub fn polyfit_r2(xs: &[f64], ys: &[f64], degree: usize) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() <= degree {
        return Err(invalid("polynomial fit needs more points than its degree"));
    }
    let design = DMatrix::from_fn(xs.len(), degree + 1, |i, j| xs[i].powi(j as i32));
    let y = nalgebra::DVector::from_column_slice(ys);
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| invalid(e.to_string()))?;
    let fitted = design * coef;
    let m = mean(ys);
    let ss_tot: f64 = ys.iter().map(|v| (v - m) * (v - m)).sum();
    let ss_res: f64 = ys
        .iter()
        .zip(fitted.iter())
        .map(|(v, f)| (v - f) * (v - f))
        .sum();
    Ok(if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    })
}
