//! Multi-agent distributed GP baseline.
//!
//! Each sensor keeps running averages `alpha = mean phi phi^T` and
//! `beta = mean phi y` of its own readings and fuses them with neighbors by
//! linear average consensus. At exact consensus the network-wide mean of
//! `alpha` is `Phi Phi^T / (R k)`, which is why the prior enters the
//! prediction as `sigma_n^2 / (R k) Lambda^-1`.

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisSet, KernelHyperparams};
use crate::error::{invalid, Result};
use crate::geometry::Point;
use crate::gp::Prediction;
use crate::linalg::{spd_factor, symmetrize};
use crate::maxplus::rmse_between;
use crate::network::{exchange, Channel};

const MESSAGE_HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct MadgpState {
    pub alpha: DMatrix<f64>,
    pub beta: DVector<f64>,
    /// Number of readings folded into the averages.
    pub step: usize,
}

impl MadgpState {
    pub fn new(basis_len: usize) -> Self {
        MadgpState {
            alpha: DMatrix::zeros(basis_len, basis_len),
            beta: DVector::zeros(basis_len),
            step: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// `[alpha | beta]` as one `E x (E+1)` block, the unit exchanged per round.
    pub fn packed(&self) -> DMatrix<f64> {
        let e = self.dim();
        let mut out = DMatrix::zeros(e, e + 1);
        out.view_mut((0, 0), (e, e)).copy_from(&self.alpha);
        out.set_column(e, &self.beta);
        out
    }

    pub fn unpack(packed: &DMatrix<f64>, step: usize) -> Result<Self> {
        let e = packed.nrows();
        if packed.ncols() != e + 1 {
            return Err(invalid(format!(
                "packed block must be E x (E+1), got {:?}",
                packed.shape()
            )));
        }
        let mut alpha = packed.columns(0, e).into_owned();
        symmetrize(&mut alpha);
        Ok(MadgpState {
            alpha,
            beta: packed.column(e).into_owned(),
            step,
        })
    }
}

/// Serialized `(alpha, beta)` pair: header plus `E^2 + E` reals.
pub fn madgp_message_bytes(basis_len: usize) -> usize {
    MESSAGE_HEADER_BYTES + 8 * (basis_len * basis_len + basis_len)
}

pub fn madgp_local_update(
    state: &MadgpState,
    x: &Point,
    y: f64,
    basis: &BasisSet,
) -> Result<MadgpState> {
    if state.dim() != basis.len() {
        return Err(invalid("MADGP state does not match the basis"));
    }
    let phi = basis.phi_vector(x)?;
    let k = (state.step + 1) as f64;
    let keep = (k - 1.0) / k;
    let mut alpha = &state.alpha * keep;
    alpha.ger(1.0 / k, &phi, &phi, 1.0);
    let beta = &state.beta * keep + &phi * (y / k);
    Ok(MadgpState {
        alpha,
        beta,
        step: state.step + 1,
    })
}

/// `v <- v - gamma * sum_j (v - v_j)`.
pub fn avg_consensus_step(
    own: &DMatrix<f64>,
    neighbors: &[&DMatrix<f64>],
    gamma: f64,
) -> Result<DMatrix<f64>> {
    if !(gamma > 0.0) || gamma * neighbors.len() as f64 >= 1.0 {
        return Err(invalid(format!(
            "consensus gain {gamma} outside (0, 1/{}) for this neighborhood",
            neighbors.len()
        )));
    }
    let mut next = own.clone();
    for v in neighbors {
        if v.shape() != own.shape() {
            return Err(invalid("neighbor value has a different shape"));
        }
        next -= (own - *v) * gamma;
    }
    Ok(next)
}

/// Default gain `1 / (deg_max + 1)`.
pub fn default_gamma(max_degree: usize) -> f64 {
    1.0 / (max_degree as f64 + 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageOutcome {
    pub values: Vec<DMatrix<f64>>,
    pub rounds: usize,
    /// Per round, the largest element-wise RMSE between a sensor's new and
    /// old value.
    pub max_change: Vec<f64>,
}

/// Network-wide rounds of average consensus until every sensor's change
/// drops below `theta_th` or `t_max` rounds have run.
pub fn run_average_consensus(
    initial: Vec<DMatrix<f64>>,
    channel: &mut Channel,
    gamma: f64,
    t_max: usize,
    theta_th: f64,
) -> Result<AverageOutcome> {
    if initial.len() != channel.len() {
        return Err(invalid(format!(
            "{} values for a network of {}",
            initial.len(),
            channel.len()
        )));
    }
    let rows = initial.first().map_or(0, |m| m.nrows());
    let mut values = initial;
    let mut max_change = Vec::new();
    for _ in 0..t_max {
        let links = channel.next_links(rows);
        let inboxes = exchange(&values, &links);
        let next = values
            .iter()
            .zip(&inboxes)
            .map(|(own, inbox)| {
                let nb: Vec<&DMatrix<f64>> = inbox.iter().map(|c| c.as_ref()).collect();
                avg_consensus_step(own, &nb, gamma)
            })
            .collect::<Result<Vec<_>>>()?;
        let change = next
            .iter()
            .zip(&values)
            .map(|(a, b)| rmse_between(a, b))
            .fold(0.0, f64::max);
        max_change.push(change);
        drop(inboxes);
        values = next;
        if change < theta_th {
            break;
        }
    }
    Ok(AverageOutcome {
        rounds: max_change.len(),
        values,
        max_change,
    })
}

/// Mean `phi*^T (alpha + sigma_n^2/(R k) Lambda^-1)^-1 beta` and the
/// quadratic form `phi*^T (alpha + sigma_n^2/(R k) Lambda^-1)^-1 phi*`.
/// The posterior variance of the pooled model is the latter times
/// `sigma_n^2 / (R k)`.
pub fn madgp_predict(
    state: &MadgpState,
    queries: &[Point],
    sensors: usize,
    k: usize,
    basis: &BasisSet,
    hp: &KernelHyperparams,
) -> Result<Vec<Prediction>> {
    let chol = madgp_factor(state, sensors, k, basis, hp)?;
    let weights = chol.solve(&state.beta);
    queries
        .iter()
        .map(|q| {
            let phi = basis.phi_vector(q)?;
            let mean = phi.dot(&weights);
            let variance = phi.dot(&chol.solve(&phi)).max(0.0);
            Ok(Prediction { mean, variance })
        })
        .collect()
}

/// Weight vector `(alpha + sigma_n^2/(R k) Lambda^-1)^-1 beta`, so predicted
/// means on many points are one matrix product.
pub fn madgp_weights(
    state: &MadgpState,
    sensors: usize,
    k: usize,
    basis: &BasisSet,
    hp: &KernelHyperparams,
) -> Result<DVector<f64>> {
    Ok(madgp_factor(state, sensors, k, basis, hp)?.solve(&state.beta))
}

fn madgp_factor(
    state: &MadgpState,
    sensors: usize,
    k: usize,
    basis: &BasisSet,
    hp: &KernelHyperparams,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if sensors == 0 || k == 0 {
        return Err(invalid("MADGP prediction needs R >= 1 and k >= 1"));
    }
    if state.dim() != basis.len() {
        return Err(invalid("MADGP state does not match the basis"));
    }
    let scale = hp.sigma_n * hp.sigma_n / (sensors * k) as f64;
    let mut a = state.alpha.clone();
    for (i, s) in basis.spectral_densities().iter().enumerate() {
        a[(i, i)] += scale / s;
    }
    symmetrize(&mut a);
    spd_factor(&a, "alpha + sigma_n^2/(R k) Lambda^-1")
}
