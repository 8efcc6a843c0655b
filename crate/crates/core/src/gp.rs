//! Centralized baselines and the single-agent recursive engine.
//!
//! The weight-space model is `f(x) = w^T phi(x)` with prior
//! `w ~ N(0, diag(S(lambda_e)))`. A single noisy reading is absorbed with a
//! scalar-innovation Kalman update; the batch form is kept as an oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{se_kernel, BasisSet, KernelHyperparams};
use crate::error::{invalid, numerical, Result};
use crate::geometry::Point;
use crate::linalg::{clamp_variance, spd_factor, symmetrize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    /// Zero-based sensor index.
    pub sensor_id: usize,
    /// Sensing step, starting at 1.
    pub step: usize,
    pub position: Point,
    pub value: f64,
}

/// Gaussian belief `N(w | m, P)` over basis weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub m: DVector<f64>,
    pub p: DMatrix<f64>,
    /// Last absorbed sensing step.
    pub step: usize,
}

impl PosteriorState {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Largest absolute entry-wise difference in `m` and `P`.
    pub fn max_abs_diff(&self, other: &PosteriorState) -> f64 {
        let dm = (&self.m - &other.m).amax();
        let dp = (&self.p - &other.p).amax();
        dm.max(dp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// Function-space GP prediction with an arbitrary kernel; the variance is
/// the pointwise diagonal of the predictive covariance.
pub fn gp_predict_with<K>(
    inputs: &[Point],
    targets: &[f64],
    queries: &[Point],
    noise_var: f64,
    kernel: K,
) -> Result<Vec<Prediction>>
where
    K: Fn(&Point, &Point) -> f64,
{
    if inputs.is_empty() {
        return Err(invalid("GP prediction needs at least one reading"));
    }
    if inputs.len() != targets.len() {
        return Err(invalid("inputs and targets differ in length"));
    }
    let n = inputs.len();
    let mut gram = DMatrix::from_fn(n, n, |i, j| kernel(&inputs[i], &inputs[j]));
    for i in 0..n {
        gram[(i, i)] += noise_var;
    }
    symmetrize(&mut gram);
    let chol = spd_factor(&gram, "K(X,X) + sigma_n^2 I")?;
    let y = DVector::from_column_slice(targets);
    let alpha = chol.solve(&y);
    queries
        .iter()
        .map(|q| {
            let k_star = DVector::from_iterator(n, inputs.iter().map(|x| kernel(q, x)));
            let mean = k_star.dot(&alpha);
            let v = chol.solve(&k_star);
            let variance = clamp_variance(kernel(q, q) - k_star.dot(&v))?;
            Ok(Prediction { mean, variance })
        })
        .collect()
}

/// Exact squared-exponential GP on the readings. Positions are used as-is,
/// so callers working in an experiment domain should pass frame-local points.
pub fn classic_gp_predict(
    readings: &[SensorReading],
    queries: &[Point],
    hp: &KernelHyperparams,
) -> Result<Vec<Prediction>> {
    let inputs: Vec<Point> = readings.iter().map(|r| r.position).collect();
    let targets: Vec<f64> = readings.iter().map(|r| r.value).collect();
    gp_predict_with(
        &inputs,
        &targets,
        queries,
        hp.sigma_n * hp.sigma_n,
        |a, b| se_kernel(a, b, hp),
    )
}

/// Posterior means only, skipping the per-query variance solves.
pub fn classic_gp_mean(
    inputs: &[Point],
    targets: &[f64],
    queries: &[Point],
    hp: &KernelHyperparams,
) -> Result<Vec<f64>> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(invalid(
            "GP mean needs matching, non-empty inputs and targets",
        ));
    }
    let n = inputs.len();
    let mut gram = DMatrix::from_fn(n, n, |i, j| se_kernel(&inputs[i], &inputs[j], hp));
    for i in 0..n {
        gram[(i, i)] += hp.sigma_n * hp.sigma_n;
    }
    symmetrize(&mut gram);
    let alpha =
        spd_factor(&gram, "K(X,X) + sigma_n^2 I")?.solve(&DVector::from_column_slice(targets));
    Ok(queries
        .iter()
        .map(|q| {
            inputs
                .iter()
                .zip(alpha.iter())
                .map(|(x, a)| a * se_kernel(q, x, hp))
                .sum()
        })
        .collect())
}

pub fn kgp_init(basis: &BasisSet) -> PosteriorState {
    PosteriorState {
        m: DVector::zeros(basis.len()),
        p: DMatrix::from_diagonal(&DVector::from_column_slice(basis.spectral_densities())),
        step: 0,
    }
}

/// Single-reading update with a scalar innovation variance; no matrix
/// inversion.
pub fn kgp_update(
    state: &PosteriorState,
    x: &Point,
    y: f64,
    hp: &KernelHyperparams,
    basis: &BasisSet,
) -> Result<PosteriorState> {
    let phi = basis.phi_vector(x)?;
    kgp_update_phi(state, &phi, y, hp)
}

pub(crate) fn kgp_update_phi(
    state: &PosteriorState,
    phi: &DVector<f64>,
    y: f64,
    hp: &KernelHyperparams,
) -> Result<PosteriorState> {
    if phi.len() != state.dim() {
        return Err(invalid("basis dimension does not match the state"));
    }
    let p_phi = &state.p * phi;
    let s = phi.dot(&p_phi) + hp.sigma_n * hp.sigma_n;
    if !(s > 0.0) {
        return Err(numerical(format!(
            "innovation variance {s} is not positive"
        )));
    }
    let gain = &p_phi / s;
    let innovation = y - phi.dot(&state.m);
    let m = &state.m + &gain * innovation;
    // P - K S K^T = P - (P phi)(P phi)^T / S
    let mut p = &state.p - (&p_phi * p_phi.transpose()) / s;
    symmetrize(&mut p);
    Ok(PosteriorState {
        m,
        p,
        step: state.step,
    })
}

/// Closed-form posterior `P = (Lambda^-1 + sigma_n^-2 sum phi phi^T)^-1`,
/// `m = P sigma_n^-2 sum phi y`. Order-free; used as the recursion's oracle.
pub fn blr_batch_posterior(
    readings: &[SensorReading],
    basis: &BasisSet,
    hp: &KernelHyperparams,
) -> Result<PosteriorState> {
    let prior = kgp_init(basis);
    if readings.is_empty() {
        return Ok(prior);
    }
    let e = basis.len();
    let noise_prec = 1.0 / (hp.sigma_n * hp.sigma_n);
    let mut info = DMatrix::from_diagonal(&DVector::from_iterator(
        e,
        basis.spectral_densities().iter().map(|s| 1.0 / s),
    ));
    let mut info_vec = DVector::zeros(e);
    for r in readings {
        let phi = basis.phi_vector(&r.position)?;
        info.ger(noise_prec, &phi, &phi, 1.0);
        info_vec.axpy(noise_prec * r.value, &phi, 1.0);
    }
    symmetrize(&mut info);
    let chol = spd_factor(&info, "information matrix")?;
    let mut p = chol.inverse();
    symmetrize(&mut p);
    let m = &p * info_vec;
    let step = readings.iter().map(|r| r.step).max().unwrap_or(0);
    Ok(PosteriorState { m, p, step })
}

/// Mean `phi*^T m` and variance `phi*^T P phi*` at each query.
pub fn posterior_predict(
    state: &PosteriorState,
    queries: &[Point],
    basis: &BasisSet,
) -> Result<Vec<Prediction>> {
    queries
        .iter()
        .map(|q| {
            let phi = basis.phi_vector(q)?;
            let mean = phi.dot(&state.m);
            let variance = clamp_variance(phi.dot(&(&state.p * &phi)))?;
            Ok(Prediction { mean, variance })
        })
        .collect()
}

/// Posterior means only, evaluated at many points through one matrix
/// product. `phi_rows` holds one `phi(x)^T` per row.
pub fn posterior_mean_rows(state: &PosteriorState, phi_rows: &DMatrix<f64>) -> DVector<f64> {
    phi_rows * &state.m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, SpectralForm};
    use approx::assert_relative_eq;

    fn setup() -> (BasisSet, KernelHyperparams) {
        let hp = KernelHyperparams {
            sigma_s: 2.0,
            l: 0.2,
            sigma_n: 0.3,
            l_k: 10.0,
        };
        (
            build_basis(16, 1.0, &hp, SpectralForm::Standard2d).unwrap(),
            hp,
        )
    }

    #[test]
    fn init_is_prior() {
        let (b, _) = setup();
        let s = kgp_init(&b);
        assert_eq!(s.m.norm(), 0.0);
        for i in 0..b.len() {
            assert_eq!(s.p[(i, i)], b.spectral_densities()[i]);
        }
        let x = [0.2, -0.4];
        let pred = posterior_predict(&s, &[x], &b).unwrap()[0];
        assert_eq!(pred.mean, 0.0);
        assert_relative_eq!(
            pred.variance,
            b.approx_kernel(&x, &x).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let (b, hp) = setup();
        let s0 = kgp_update(&kgp_init(&b), &[0.1, 0.1], 1.0, &hp, &b).unwrap();
        let x = [-0.3, 0.5];
        let y = b.phi_vector(&x).unwrap().dot(&s0.m);
        let s1 = kgp_update(&s0, &x, y, &hp, &b).unwrap();
        assert!((&s1.m - &s0.m).amax() < 1e-15);
        assert!(s1.p.trace() < s0.p.trace());
    }

    #[test]
    fn one_reading_matches_batch() {
        let (b, hp) = setup();
        let r = SensorReading {
            sensor_id: 0,
            step: 1,
            position: [0.3, -0.1],
            value: 0.7,
        };
        let rec = kgp_update(&kgp_init(&b), &r.position, r.value, &hp, &b).unwrap();
        let batch = blr_batch_posterior(&[r], &b, &hp).unwrap();
        assert!(rec.max_abs_diff(&batch) < 1e-10);
        assert_eq!(blr_batch_posterior(&[], &b, &hp).unwrap(), kgp_init(&b));
    }

    #[test]
    fn classic_gp_limits() {
        let mut hp = KernelHyperparams {
            sigma_s: 1.5,
            l: 0.3,
            sigma_n: 1e-6,
            l_k: 1.0,
        };
        let readings = [
            SensorReading {
                sensor_id: 0,
                step: 1,
                position: [0.0, 0.0],
                value: 1.25,
            },
            SensorReading {
                sensor_id: 1,
                step: 1,
                position: [0.5, 0.2],
                value: -0.5,
            },
        ];
        let at = classic_gp_predict(&readings, &[[0.0, 0.0]], &hp).unwrap()[0];
        assert_relative_eq!(at.mean, 1.25, epsilon = 1e-6);
        hp.sigma_n = 0.1;
        let far = classic_gp_predict(&readings, &[[50.0, 50.0]], &hp).unwrap()[0];
        assert!(far.mean.abs() < 1e-12);
        assert_relative_eq!(far.variance, 2.25, epsilon = 1e-12);
        assert!(classic_gp_predict(&[], &[[0.0, 0.0]], &hp).is_err());
    }

    #[test]
    fn out_of_box_update_is_rejected() {
        let (b, hp) = setup();
        assert!(kgp_update(&kgp_init(&b), &[1.5, 0.0], 0.0, &hp, &b).is_err());
    }
}
