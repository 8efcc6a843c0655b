//! Convection-diffusion scenario with and without the temporal prediction.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind};
use super::metrics::{iterations_to_consensus, mean, rmse_slices};
use super::output::{ExperimentOutput, Table, TrialRow};
use super::{deploy, make_channel, phi_rows, Stopwatch};
use crate::basis::BasisSet;
use crate::error::{invalid, Result};
use crate::field::{advance_scaled, measure, FieldGrid};
use crate::gp::{kgp_init, PosteriorState, SensorReading};
use crate::kdgp::{
    absorb_readings, kdgp_predict, kdgp_update, message_bytes, AssembledMeasurement, SensingParams,
    SensorNode,
};

pub const PREDICT: &str = "kdgp_predict";
pub const NO_PREDICT: &str = "kdgp_no_predict";

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicTrial {
    pub rows: Vec<TrialRow>,
    /// Per sensing step: `(time, rmse with prediction, rmse without)`.
    pub series: Vec<(f64, f64, f64)>,
    pub snapshots: Vec<(String, String)>,
}

struct Estimator {
    nodes: Vec<SensorNode>,
    central: PosteriorState,
    params: SensingParams,
    channel: crate::network::Channel,
    iters: Vec<f64>,
}

impl Estimator {
    fn absorb(
        &mut self,
        readings: &[SensorReading],
        basis: &BasisSet,
        cfg: &ExperimentConfig,
    ) -> Result<()> {
        let report = absorb_readings(
            &mut self.nodes,
            readings,
            &mut self.channel,
            &self.params,
            basis,
        )?;
        let settled = iterations_to_consensus(
            &report.consensus.max_change,
            cfg.settle_threshold,
            cfg.settle_window,
        )
        .unwrap_or(report.consensus.max_change.len());
        self.iters.push(settled as f64);
        let prior = if self.params.flag_dynamic {
            kdgp_predict(&self.central, self.params.delta_k, &self.params.hp)?
        } else {
            self.central.clone()
        };
        self.central = kdgp_update(
            &prior,
            &AssembledMeasurement::from_readings(readings, basis)?,
            &self.params.hp,
        )?;
        Ok(())
    }
}

pub fn run_dynamic_trial(cfg: &ExperimentConfig, trial: usize) -> Result<DynamicTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.trial_seed(trial));
    let hp = cfg.hyperparams()?;
    let grid = cfg.grid()?;
    let source = cfg.source();
    let graph = deploy(cfg, &mut rng)?;
    let link_seed: u64 = rng.random();
    let basis = BasisSet::for_domain(
        cfg.basis_len,
        &cfg.domain(),
        cfg.domain_margin,
        &hp,
        cfg.spectral_form,
    )?;
    let rows_phi = phi_rows(&basis, &grid.nodes())?;

    let mut truth = advance_scaled(
        &FieldGrid::zeros(grid),
        cfg.warmup_time,
        &source,
        cfg.source_amplitude,
    )?;
    let make = |flag: bool| -> Result<Estimator> {
        Ok(Estimator {
            nodes: graph
                .positions()
                .iter()
                .enumerate()
                .map(|(id, x)| SensorNode {
                    id,
                    position: *x,
                    state: kgp_init(&basis),
                })
                .collect(),
            central: kgp_init(&basis),
            params: SensingParams {
                t_max: cfg.t_max,
                theta_th: cfg.theta_th,
                flag_dynamic: flag,
                delta_k: cfg.delta_k,
                hp,
            },
            channel: make_channel(cfg, graph.clone(), link_seed)?,
            iters: Vec::new(),
        })
    };
    let mut with = make(cfg.flag_dynamic)?;
    let mut without = if cfg.run_ablation {
        Some(make(false)?)
    } else {
        None
    };

    let field_rmse = |nodes: &[SensorNode], truth: &FieldGrid| -> Result<f64> {
        let per: Vec<f64> = nodes
            .iter()
            .map(|n| rmse_slices((&rows_phi * &n.state.m).as_slice(), &truth.values))
            .collect::<Result<_>>()?;
        Ok(mean(&per))
    };
    let central_gap = |nodes: &[SensorNode], central: &PosteriorState| -> f64 {
        let c: DVector<f64> = &rows_phi * &central.m;
        mean(
            &nodes
                .iter()
                .map(|n| {
                    rmse_slices((&rows_phi * &n.state.m).as_slice(), c.as_slice())
                        .unwrap_or(f64::NAN)
                })
                .collect::<Vec<_>>(),
        )
    };

    let mut series = Vec::new();
    let mut snapshots = Vec::new();
    let mut ms = [0u64; 2];
    for step in 1..=cfg.k_max {
        truth = advance_scaled(
            &truth,
            truth.time + cfg.pde_time_per_step,
            &source,
            cfg.source_amplitude,
        )?;
        let readings = graph
            .positions()
            .iter()
            .enumerate()
            .map(|(id, x)| {
                Ok(SensorReading {
                    sensor_id: id,
                    step,
                    position: *x,
                    value: measure(&truth, x, hp.sigma_n, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let clock = Stopwatch::start(cfg.record_timing);
        with.absorb(&readings, &basis, cfg)?;
        ms[0] += clock.elapsed_ms();
        let rmse_with = field_rmse(&with.nodes, &truth)?;
        let rmse_without = match without.as_mut() {
            Some(est) => {
                let clock = Stopwatch::start(cfg.record_timing);
                est.absorb(&readings, &basis, cfg)?;
                ms[1] += clock.elapsed_ms();
                field_rmse(&est.nodes, &truth)?
            }
            None => f64::NAN,
        };
        series.push((truth.time, rmse_with, rmse_without));
        if cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0 {
            let mut buf = Vec::new();
            truth.write_csv(&mut buf)?;
            snapshots.push((
                format!("truth_trial{trial}_step{step}.csv"),
                String::from_utf8_lossy(&buf).into_owned(),
            ));
            let est = FieldGrid::from_values(
                grid,
                (&rows_phi * &with.nodes[0].state.m)
                    .iter()
                    .copied()
                    .collect(),
                truth.time,
            )?;
            let mut buf = Vec::new();
            est.write_csv(&mut buf)?;
            snapshots.push((
                format!("estimate_trial{trial}_step{step}.csv"),
                String::from_utf8_lossy(&buf).into_owned(),
            ));
        }
    }

    let bytes = message_bytes(cfg.basis_len, cfg.sensors);
    let row = |method: &str, rmse: f64, central: f64, iters: f64, ms: u64| TrialRow {
        trial,
        method: method.to_string(),
        sensors: cfg.sensors,
        basis_len: cfg.basis_len,
        rmse_field: rmse,
        rmse_centralized: central,
        consensus_iters_mean: iters,
        msg_bytes: bytes,
        wall_ms: ms,
    };
    let avg = |i: usize| {
        mean(
            &series
                .iter()
                .map(|s| if i == 0 { s.1 } else { s.2 })
                .collect::<Vec<_>>(),
        )
    };
    let mut rows = vec![row(
        PREDICT,
        avg(0),
        central_gap(&with.nodes, &with.central),
        mean(&with.iters),
        ms[0],
    )];
    if let Some(est) = &without {
        rows.push(row(
            NO_PREDICT,
            avg(1),
            central_gap(&est.nodes, &est.central),
            mean(&est.iters),
            ms[1],
        ));
    }
    Ok(DynamicTrial {
        rows,
        series,
        snapshots,
    })
}

pub fn run_dynamic(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if cfg.kind != ExperimentKind::Dynamic {
        return Err(invalid("configuration is not a dynamic config"));
    }
    cfg.validate()?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_dynamic_trial(cfg, t))
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(
        "timeseries.csv",
        &["trial", "step", "time", "rmse_predict", "rmse_no_predict"],
    );
    let mut wins = 0usize;
    for (t, trial) in trials.iter().enumerate() {
        for (k, (time, a, b)) in trial.series.iter().enumerate() {
            table.rows.push(vec![
                t.to_string(),
                (k + 1).to_string(),
                time.to_string(),
                a.to_string(),
                b.to_string(),
            ]);
        }
        if trial.rows.len() == 2 && trial.rows[0].rmse_field < trial.rows[1].rmse_field {
            wins += 1;
        }
    }
    let mut out = ExperimentOutput {
        config: cfg.clone(),
        rows: Vec::new(),
        tables: vec![table],
        snapshots: Vec::new(),
        extra: Default::default(),
    };
    for trial in trials {
        out.rows.extend(trial.rows);
        out.snapshots.extend(trial.snapshots);
    }
    if cfg.run_ablation {
        out.extra.insert("prediction_wins".into(), wins as f64);
    }
    Ok(out)
}
