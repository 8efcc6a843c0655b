//! Distributed Kalman-filter GP.
//!
//! Every sensor shares an `(E+1) x R` matrix that is zero except for its own
//! column `[phi(x_r); y_r]`. Dual-extrema consensus fills in the other
//! columns without touching any sensor's own column, after which each sensor
//! holds the stacked measurement matrix `H` and vector `y` and runs one
//! multi-measurement Kalman update whose only inversion is `R x R`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::basis::{BasisSet, KernelHyperparams};
use crate::error::{invalid, Result};
use crate::field::{measure, FieldGrid};
use crate::geometry::Point;
use crate::gp::{PosteriorState, SensorReading};
use crate::linalg::{spd_factor, symmetrize};
use crate::maxplus::{dual_extrema_combine, rmse_between};
use crate::network::{exchange, Channel};

const MESSAGE_HEADER_BYTES: usize = 16;

/// Matrix a sensor broadcasts during consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedMessage {
    /// Zero-based id of the owning sensor; its column is the intrinsic one.
    pub sensor_id: usize,
    /// Rows `0..E` hold basis values, row `E` the measurements.
    pub matrix: DMatrix<f64>,
    pub iteration: usize,
}

impl SharedMessage {
    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn intrinsic_column(&self) -> DVector<f64> {
        self.matrix.column(self.sensor_id).into_owned()
    }

    /// Little-endian wire form: `sensor_id, rows, cols, iteration` as `u32`
    /// followed by the entries as `f64` in column-major order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        for v in [
            self.sensor_id,
            self.matrix.nrows(),
            self.matrix.ncols(),
            self.iteration,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in self.matrix.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn byte_len(&self) -> usize {
        MESSAGE_HEADER_BYTES + 8 * self.matrix.len()
    }
}

/// Serialized size of a shared message for `E` basis functions and `R`
/// sensors.
pub fn message_bytes(basis_len: usize, sensors: usize) -> usize {
    MESSAGE_HEADER_BYTES + 8 * (basis_len + 1) * sensors
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledMeasurement {
    /// `E x R`, column `n` is `phi(x_n)`.
    pub h: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl AssembledMeasurement {
    /// Central assembly straight from the readings, ordered by sensor id.
    pub fn from_readings(readings: &[SensorReading], basis: &BasisSet) -> Result<Self> {
        let mut h = DMatrix::zeros(basis.len(), readings.len());
        let mut y = DVector::zeros(readings.len());
        for r in readings {
            if r.sensor_id >= readings.len() {
                return Err(invalid(format!("sensor id {} out of range", r.sensor_id)));
            }
            h.set_column(r.sensor_id, &basis.phi_vector(&r.position)?);
            y[r.sensor_id] = r.value;
        }
        Ok(AssembledMeasurement { h, y })
    }
}

pub fn build_local_message(
    sensor_id: usize,
    sensors: usize,
    x: &Point,
    y: f64,
    basis: &BasisSet,
) -> Result<SharedMessage> {
    if sensor_id >= sensors {
        return Err(invalid(format!(
            "sensor id {sensor_id} out of range 0..{sensors}"
        )));
    }
    let phi = basis.phi_vector(x)?;
    let e = basis.len();
    let mut matrix = DMatrix::zeros(e + 1, sensors);
    matrix.view_mut((0, sensor_id), (e, 1)).copy_from(&phi);
    matrix[(e, sensor_id)] = y;
    Ok(SharedMessage {
        sensor_id,
        matrix,
        iteration: 0,
    })
}

/// Splits the last row back off as `y`.
pub fn split_message(msg: &SharedMessage) -> AssembledMeasurement {
    let e = msg.matrix.nrows().saturating_sub(1);
    AssembledMeasurement {
        h: msg.matrix.rows(0, e).into_owned(),
        y: msg.matrix.row(e).transpose(),
    }
}

/// One dual-extrema round for the owner of `own`.
pub fn dual_extrema_step(own: &SharedMessage, inbox: &[&SharedMessage]) -> Result<SharedMessage> {
    let mats: Vec<&DMatrix<f64>> = inbox.iter().map(|m| &m.matrix).collect();
    Ok(SharedMessage {
        sensor_id: own.sensor_id,
        matrix: dual_extrema_combine(&own.matrix, &mats)?,
        iteration: own.iteration + 1,
    })
}

/// Multi-measurement update `S = H^T P H + sigma_n^2 I`, `K = P H S^-1`.
pub fn kdgp_update(
    state: &PosteriorState,
    meas: &AssembledMeasurement,
    hp: &KernelHyperparams,
) -> Result<PosteriorState> {
    if meas.h.nrows() != state.dim() || meas.h.ncols() != meas.y.len() {
        return Err(invalid(format!(
            "measurement is {}x{} with {} values, state has {} weights",
            meas.h.nrows(),
            meas.h.ncols(),
            meas.y.len(),
            state.dim()
        )));
    }
    let ph = &state.p * &meas.h;
    let mut s = meas.h.transpose() * &ph;
    for i in 0..s.nrows() {
        s[(i, i)] += hp.sigma_n * hp.sigma_n;
    }
    symmetrize(&mut s);
    let chol = spd_factor(&s, "innovation covariance S")?;
    let innovation = &meas.y - meas.h.transpose() * &state.m;
    let m = &state.m + &ph * chol.solve(&innovation);
    // K S K^T = P H S^-1 H^T P
    let gain_t = chol.solve(&ph.transpose());
    let mut p = &state.p - &ph * gain_t;
    symmetrize(&mut p);
    Ok(PosteriorState {
        m,
        p,
        step: state.step,
    })
}

/// Ornstein-Uhlenbeck time update: `m <- a m`, `P <- a^2 P + q I` with
/// `a = exp(-dk / l_k)` and `q = 1 - exp(-2 dk / l_k)`.
pub fn kdgp_predict(
    state: &PosteriorState,
    delta_k: f64,
    hp: &KernelHyperparams,
) -> Result<PosteriorState> {
    if !(delta_k >= 0.0) {
        return Err(invalid(format!(
            "prediction horizon must be >= 0, got {delta_k}"
        )));
    }
    let a = (-delta_k / hp.l_k).exp();
    let q = -(-2.0 * delta_k / hp.l_k).exp_m1();
    let m = &state.m * a;
    let mut p = &state.p * (a * a);
    for i in 0..p.nrows() {
        p[(i, i)] += q;
    }
    Ok(PosteriorState {
        m,
        p,
        step: state.step,
    })
}

/// Result of a bulk-synchronous dual-extrema run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome {
    pub messages: Vec<SharedMessage>,
    /// Loop iterations each sensor executed before its stop condition held.
    pub loop_iterations: Vec<usize>,
    /// Per round: largest element-wise RMSE between a sensor's new and old
    /// matrix (zero for sensors that already stopped).
    pub max_change: Vec<f64>,
}

/// Runs the per-sensor loop `while t <= t_max && theta >= theta_th` in
/// lock-step rounds. A sensor that has stopped keeps broadcasting its last
/// matrix but no longer updates it.
pub fn run_dual_extrema(
    initial: Vec<SharedMessage>,
    channel: &mut Channel,
    t_max: usize,
    theta_th: f64,
) -> Result<ConsensusOutcome> {
    let n = initial.len();
    if n != channel.len() {
        return Err(invalid(format!(
            "{n} messages for a network of {}",
            channel.len()
        )));
    }
    let rows = initial.first().map_or(0, |m| m.matrix.nrows());
    let mut messages = initial;
    let mut active = vec![true; n];
    let mut loop_iterations = vec![0usize; n];
    let mut max_change = Vec::new();
    while active.iter().any(|&a| a) {
        let links = channel.next_links(rows);
        let outboxes: Vec<DMatrix<f64>> = messages.iter().map(|m| m.matrix.clone()).collect();
        let inboxes = exchange(&outboxes, &links);
        let mut round_change = 0.0f64;
        for r in 0..n {
            if !active[r] {
                continue;
            }
            let inbox: Vec<&DMatrix<f64>> = inboxes[r].iter().map(|c| c.as_ref()).collect();
            let next = dual_extrema_combine(&messages[r].matrix, &inbox)?;
            let theta = rmse_between(&next, &messages[r].matrix);
            round_change = round_change.max(theta);
            messages[r].matrix = next;
            messages[r].iteration += 1;
            loop_iterations[r] += 1;
            let t = loop_iterations[r];
            if !(t <= t_max && theta >= theta_th) {
                active[r] = false;
            }
        }
        max_change.push(round_change);
    }
    Ok(ConsensusOutcome {
        messages,
        loop_iterations,
        max_change,
    })
}

/// Per-sensor state kept across sensing steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorNode {
    pub id: usize,
    pub position: Point,
    pub state: PosteriorState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingParams {
    pub t_max: usize,
    pub theta_th: f64,
    /// Run the temporal prediction before each update.
    pub flag_dynamic: bool,
    pub delta_k: f64,
    pub hp: KernelHyperparams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingReport {
    pub readings: Vec<SensorReading>,
    pub consensus: ConsensusOutcome,
    pub message_bytes: usize,
}

/// One sensing step for every sensor: measure the truth, agree on `(H, y)`
/// by dual-extrema consensus, then predict (dynamic fields) and update.
pub fn run_sensing_step<R: Rng + ?Sized>(
    nodes: &mut [SensorNode],
    channel: &mut Channel,
    params: &SensingParams,
    truth: &FieldGrid,
    basis: &BasisSet,
    rng: &mut R,
) -> Result<SensingReport> {
    let step = nodes.first().map_or(0, |n| n.state.step) + 1;
    let readings = nodes
        .iter()
        .map(|n| {
            Ok(SensorReading {
                sensor_id: n.id,
                step,
                position: n.position,
                value: measure(truth, &n.position, params.hp.sigma_n, rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    absorb_readings(nodes, &readings, channel, params, basis)
}

/// Consensus and filter update for readings taken elsewhere, so several
/// estimators can share the same measurements.
pub fn absorb_readings(
    nodes: &mut [SensorNode],
    readings: &[SensorReading],
    channel: &mut Channel,
    params: &SensingParams,
    basis: &BasisSet,
) -> Result<SensingReport> {
    let r_count = nodes.len();
    if readings.len() != r_count {
        return Err(invalid("one reading per sensor is required"));
    }
    if let Some(bad) = nodes.iter().find(|n| n.state.dim() != basis.len()) {
        return Err(invalid(format!(
            "sensor {} state does not match the basis",
            bad.id
        )));
    }
    let initial = readings
        .iter()
        .map(|r| build_local_message(r.sensor_id, r_count, &r.position, r.value, basis))
        .collect::<Result<Vec<_>>>()?;
    let consensus = run_dual_extrema(initial, channel, params.t_max, params.theta_th)?;
    let step = readings.iter().map(|r| r.step).max().unwrap_or(0);
    let updated: Vec<PosteriorState> = nodes
        .par_iter()
        .zip(consensus.messages.par_iter())
        .map(|(node, msg)| {
            let meas = split_message(msg);
            let prior = if params.flag_dynamic {
                kdgp_predict(&node.state, params.delta_k, &params.hp)?
            } else {
                node.state.clone()
            };
            let mut post = kdgp_update(&prior, &meas, &params.hp)?;
            post.step = step;
            Ok(post)
        })
        .collect::<Result<Vec<_>>>()?;
    for (node, state) in nodes.iter_mut().zip(updated) {
        node.state = state;
    }
    Ok(SensingReport {
        readings: readings.to_vec(),
        consensus,
        message_bytes: message_bytes(basis.len(), r_count),
    })
}
