//! Dual-extrema versus average consensus on random intrinsic-column
//! matrices.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind};
use super::metrics::{iterations_to_consensus, rmse_matrix};
use super::output::{ExperimentOutput, TrialRow};
use super::{deploy, make_channel, Stopwatch};
use crate::error::{invalid, Result};
use crate::kdgp::{message_bytes, run_dual_extrema, SharedMessage};
use crate::madgp::{default_gamma, run_average_consensus};

pub const DUAL: &str = "dual_extrema";
pub const AVERAGE: &str = "average";

/// Per-trial measurements beyond the results rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchTrial {
    pub rows: [TrialRow; 2],
    pub diameter: usize,
    pub dual_iters: usize,
    pub average_iters: usize,
}

/// `(E+1) x R` matrices whose only nonzero column is the owner's, entries
/// uniform in `[-1, 1]`.
pub fn random_intrinsic_matrices<R: Rng + ?Sized>(
    rows: usize,
    sensors: usize,
    rng: &mut R,
) -> Vec<DMatrix<f64>> {
    (0..sensors)
        .map(|r| {
            let mut m = DMatrix::zeros(rows, sensors);
            for i in 0..rows {
                m[(i, r)] = rng.random_range(-1.0..=1.0);
            }
            m
        })
        .collect()
}

pub fn run_bench_trial(cfg: &ExperimentConfig, trial: usize) -> Result<BenchTrial> {
    let clock = Stopwatch::start(cfg.record_timing);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.trial_seed(trial));
    let graph = deploy(cfg, &mut rng)?;
    let diameter = graph
        .diameter()
        .ok_or_else(|| invalid("deployment is disconnected"))?;
    let (r, e) = (cfg.sensors, cfg.basis_len);
    let initial = random_intrinsic_matrices(e + 1, r, &mut rng);
    let target = initial
        .iter()
        .fold(DMatrix::zeros(e + 1, r), |acc, m| acc + m);
    let link_seed: u64 = rng.random();
    let rounds = cfg.t_max + 1;

    let messages = initial
        .iter()
        .enumerate()
        .map(|(id, m)| SharedMessage {
            sensor_id: id,
            matrix: m.clone(),
            iteration: 0,
        })
        .collect();
    let mut channel = make_channel(cfg, graph.clone(), link_seed)?;
    let dual = run_dual_extrema(messages, &mut channel, cfg.t_max, cfg.theta_th)?;
    let dual_rmse = dual
        .messages
        .iter()
        .map(|m| rmse_matrix(&m.matrix, &target))
        .sum::<Result<f64>>()?
        / r as f64;
    let dual_iters =
        iterations_to_consensus(&dual.max_change, cfg.settle_threshold, cfg.settle_window)
            .unwrap_or(dual.max_change.len());
    let dual_ms = clock.elapsed_ms();

    let clock = Stopwatch::start(cfg.record_timing);
    let gamma = cfg
        .gamma
        .unwrap_or_else(|| default_gamma(graph.max_degree()));
    let mut channel = make_channel(cfg, graph, link_seed)?;
    let avg = run_average_consensus(initial, &mut channel, gamma, rounds, 0.0)?;
    let scale = r as f64;
    let avg_rmse = avg
        .values
        .iter()
        .map(|v| rmse_matrix(&(v * scale), &target))
        .sum::<Result<f64>>()?
        / r as f64;
    let scaled_changes: Vec<f64> = avg.max_change.iter().map(|c| c * scale).collect();
    let average_iters =
        iterations_to_consensus(&scaled_changes, cfg.settle_threshold, cfg.settle_window)
            .unwrap_or(scaled_changes.len());
    let avg_ms = clock.elapsed_ms();

    let row = |method: &str, rmse: f64, iters: usize, ms: u64| TrialRow {
        trial,
        method: method.to_string(),
        sensors: r,
        basis_len: e,
        rmse_field: f64::NAN,
        rmse_centralized: rmse,
        consensus_iters_mean: iters as f64,
        msg_bytes: message_bytes(e, r),
        wall_ms: ms,
    };
    Ok(BenchTrial {
        rows: [
            row(DUAL, dual_rmse, dual_iters, dual_ms),
            row(AVERAGE, avg_rmse, average_iters, avg_ms),
        ],
        diameter,
        dual_iters,
        average_iters,
    })
}

pub fn run_consensus_bench(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if cfg.kind != ExperimentKind::ConsensusBench {
        return Err(invalid("configuration is not a consensus-bench config"));
    }
    cfg.validate()?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_bench_trial(cfg, t))
        .collect::<Result<Vec<_>>>()?;
    let wins = trials
        .iter()
        .filter(|t| t.dual_iters <= t.average_iters)
        .count();
    let mut extra = BTreeMap::new();
    extra.insert(
        "dual_iters_le_average_fraction".to_string(),
        wins as f64 / trials.len() as f64,
    );
    extra.insert(
        "diameter_mean".to_string(),
        trials.iter().map(|t| t.diameter as f64).sum::<f64>() / trials.len() as f64,
    );
    Ok(ExperimentOutput {
        config: cfg.clone(),
        rows: trials.into_iter().flat_map(|t| t.rows).collect(),
        tables: Vec::new(),
        snapshots: Vec::new(),
        extra,
    })
}
