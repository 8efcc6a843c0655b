//! Experiment orchestration: configuration, the four experiment runners,
//! metrics and output files.
//!
//! Trials run in parallel; trial `i` owns an RNG seeded with `seed + i` and
//! results are merged in trial order, so outputs depend only on the config.

pub mod config;
pub mod consensus_bench;
pub mod dynamic;
pub mod kernel_study;
pub mod metrics;
pub mod output;
pub mod stationary;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;

pub use config::{ExperimentConfig, ExperimentKind, LinkKind, TruthSampler};
pub use output::{write_outputs, ExperimentOutput, Summary, TrialRow};

use crate::basis::BasisSet;
use crate::error::Result;
use crate::geometry::Point;
use crate::network::{
    d_comm_for_target_degree, random_geometric_deployment, Channel, LinkSampler, NetworkGraph,
};

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match cfg.kind {
        ExperimentKind::ConsensusBench => consensus_bench::run_consensus_bench(cfg),
        ExperimentKind::Stationary => stationary::run_stationary(cfg),
        ExperimentKind::Dynamic => dynamic::run_dynamic(cfg),
        ExperimentKind::KernelApprox => kernel_study::run_kernel_study(cfg),
    }
}

/// Connected random geometric deployment over the configured domain.
pub fn deploy<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> Result<NetworkGraph> {
    let domain = cfg.domain();
    let d_comm = cfg
        .d_comm
        .unwrap_or_else(|| d_comm_for_target_degree(cfg.sensors, &domain, cfg.target_degree));
    random_geometric_deployment(cfg.sensors, &domain, d_comm, rng)
}

pub fn make_channel(cfg: &ExperimentConfig, graph: NetworkGraph, seed: u64) -> Result<Channel> {
    let sampler = LinkSampler::new(&graph, cfg.link()?, cfg.lossy_fraction, seed)?;
    Ok(Channel::new(graph, sampler))
}

/// One `phi(x)^T` per row.
pub fn phi_rows(basis: &BasisSet, points: &[Point]) -> Result<DMatrix<f64>> {
    let mut rows = DMatrix::zeros(points.len(), basis.len());
    for (i, p) in points.iter().enumerate() {
        rows.set_row(i, &basis.phi_vector(p)?.transpose());
    }
    Ok(rows)
}

/// Wall-clock timer that reads 0 unless enabled.
pub(crate) struct Stopwatch(Option<Instant>);

impl Stopwatch {
    pub(crate) fn start(enabled: bool) -> Self {
        Stopwatch(enabled.then(Instant::now))
    }

    pub(crate) fn elapsed_ms(&self) -> u64 {
        self.0.map_or(0, |t| t.elapsed().as_millis() as u64)
    }
}
