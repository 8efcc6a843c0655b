//! K-DGP against MADGP on GP-sampled stationary fields.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind, TruthSampler};
use super::metrics::{iterations_to_consensus, mean, rmse_slices};
use super::output::{ExperimentOutput, TrialRow};
use super::{deploy, make_channel, phi_rows, Stopwatch};
use crate::basis::BasisSet;
use crate::error::{invalid, Result};
use crate::field::{measure, sample_gp_field_basis, sample_gp_field_dense, FieldGrid};
use crate::gp::{classic_gp_mean, kgp_init, SensorReading};
use crate::kdgp::{absorb_readings, message_bytes, SensingParams, SensorNode};
use crate::madgp::{
    default_gamma, madgp_local_update, madgp_message_bytes, madgp_weights, run_average_consensus,
    MadgpState,
};

pub const KDGP: &str = "kdgp";
pub const MADGP: &str = "madgp";
pub const CENTRALIZED: &str = "centralized_gp";

pub fn sample_truth<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> Result<FieldGrid> {
    let hp = cfg.hyperparams()?;
    let grid = cfg.grid()?;
    match cfg.truth_sampler {
        TruthSampler::Basis => {
            let basis = BasisSet::for_domain(
                cfg.truth_basis_len.unwrap_or(cfg.basis_len),
                &cfg.domain(),
                cfg.domain_margin,
                &hp,
                cfg.spectral_form,
            )?;
            sample_gp_field_basis(&basis, &grid, rng)
        }
        TruthSampler::Dense => {
            // the kernel acts in the unit frame, as the basis does
            let frame = crate::basis::Frame::for_domain(&cfg.domain());
            let local = crate::field::GridSpec::new(
                crate::geometry::Domain::new(
                    frame.to_local(&[cfg.xmin, cfg.ymin])[0],
                    frame.to_local(&[cfg.xmax, cfg.ymin])[0],
                    frame.to_local(&[cfg.xmin, cfg.ymin])[1],
                    frame.to_local(&[cfg.xmin, cfg.ymax])[1],
                ),
                grid.nx,
                grid.ny,
            )?;
            let f = sample_gp_field_dense(&hp, &local, rng)?;
            FieldGrid::from_values(grid, f.values, 0.0)
        }
    }
}

pub fn run_stationary_trial(cfg: &ExperimentConfig, trial: usize) -> Result<Vec<TrialRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.trial_seed(trial));
    let hp = cfg.hyperparams()?;
    let truth = sample_truth(cfg, &mut rng)?;
    let graph = deploy(cfg, &mut rng)?;
    let link_seed: u64 = rng.random();
    let basis = BasisSet::for_domain(
        cfg.basis_len,
        &cfg.domain(),
        cfg.domain_margin,
        &hp,
        cfg.spectral_form,
    )?;
    let rows_phi = phi_rows(&basis, &truth.spec.nodes())?;
    let r = cfg.sensors;

    let readings: Vec<Vec<SensorReading>> = (1..=cfg.k_max)
        .map(|step| {
            graph
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
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let centralized = if cfg.centralized_reference {
        let frame = basis.frame();
        let pooled: Vec<&SensorReading> = readings.iter().flatten().collect();
        let inputs: Vec<_> = pooled.iter().map(|p| frame.to_local(&p.position)).collect();
        let targets: Vec<f64> = pooled.iter().map(|p| p.value).collect();
        let queries: Vec<_> = truth
            .spec
            .nodes()
            .iter()
            .map(|q| frame.to_local(q))
            .collect();
        Some(classic_gp_mean(&inputs, &targets, &queries, &hp)?)
    } else {
        None
    };

    // K-DGP
    let clock = Stopwatch::start(cfg.record_timing);
    let params = SensingParams {
        t_max: cfg.t_max,
        theta_th: cfg.theta_th,
        flag_dynamic: false,
        delta_k: cfg.delta_k,
        hp,
    };
    let mut nodes: Vec<SensorNode> = graph
        .positions()
        .iter()
        .enumerate()
        .map(|(id, x)| SensorNode {
            id,
            position: *x,
            state: kgp_init(&basis),
        })
        .collect();
    let mut channel = make_channel(cfg, graph.clone(), link_seed)?;
    let mut kdgp_iters = Vec::new();
    for step in &readings {
        let report = absorb_readings(&mut nodes, step, &mut channel, &params, &basis)?;
        kdgp_iters.push(settled(cfg, &report.consensus.max_change));
    }
    let kdgp_fields: Vec<DVector<f64>> = nodes.iter().map(|n| &rows_phi * &n.state.m).collect();
    let kdgp_ms = clock.elapsed_ms();

    // MADGP
    let clock = Stopwatch::start(cfg.record_timing);
    let gamma = cfg
        .gamma
        .unwrap_or_else(|| default_gamma(graph.max_degree()));
    // the recursion runs on each sensor's own statistics; consensus restarts
    // from them at every step
    let mut local = vec![MadgpState::new(basis.len()); r];
    let mut states = local.clone();
    let mut channel = make_channel(cfg, graph, link_seed)?;
    let mut madgp_iters = Vec::new();
    for step in &readings {
        for (s, reading) in local.iter_mut().zip(step) {
            *s = madgp_local_update(s, &reading.position, reading.value, &basis)?;
        }
        let packed: Vec<DMatrix<f64>> = local.iter().map(MadgpState::packed).collect();
        let out = run_average_consensus(packed, &mut channel, gamma, cfg.t_max, cfg.theta_th)?;
        madgp_iters.push(settled(cfg, &out.max_change));
        states = out
            .values
            .iter()
            .zip(&local)
            .map(|(v, s)| MadgpState::unpack(v, s.step))
            .collect::<Result<_>>()?;
    }
    let k = cfg.k_max;
    let madgp_fields: Vec<DVector<f64>> = states
        .par_iter()
        .map(|s| Ok(&rows_phi * madgp_weights(s, r, k, &basis, &hp)?))
        .collect::<Result<_>>()?;
    let madgp_ms = clock.elapsed_ms();

    let score = |fields: &[DVector<f64>]| -> Result<(f64, f64)> {
        let field = fields
            .iter()
            .map(|f| rmse_slices(f.as_slice(), &truth.values))
            .collect::<Result<Vec<_>>>()?;
        let central = match &centralized {
            Some(c) => mean(
                &fields
                    .iter()
                    .map(|f| rmse_slices(f.as_slice(), c))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => f64::NAN,
        };
        Ok((mean(&field), central))
    };
    let (kdgp_field, kdgp_central) = score(&kdgp_fields)?;
    let (madgp_field, madgp_central) = score(&madgp_fields)?;
    let row =
        |method: &str, field: f64, central: f64, iters: f64, bytes: usize, ms: u64| TrialRow {
            trial,
            method: method.to_string(),
            sensors: r,
            basis_len: cfg.basis_len,
            rmse_field: field,
            rmse_centralized: central,
            consensus_iters_mean: iters,
            msg_bytes: bytes,
            wall_ms: ms,
        };
    let mut rows = vec![
        row(
            KDGP,
            kdgp_field,
            kdgp_central,
            mean(&kdgp_iters),
            message_bytes(cfg.basis_len, r),
            kdgp_ms,
        ),
        row(
            MADGP,
            madgp_field,
            madgp_central,
            mean(&madgp_iters),
            madgp_message_bytes(cfg.basis_len),
            madgp_ms,
        ),
    ];
    if let Some(c) = &centralized {
        rows.push(row(
            CENTRALIZED,
            rmse_slices(c, &truth.values)?,
            0.0,
            f64::NAN,
            0,
            0,
        ));
    }
    Ok(rows)
}

fn settled(cfg: &ExperimentConfig, changes: &[f64]) -> f64 {
    iterations_to_consensus(changes, cfg.settle_threshold, cfg.settle_window)
        .unwrap_or(changes.len()) as f64
}

pub fn run_stationary(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if cfg.kind != ExperimentKind::Stationary {
        return Err(invalid("configuration is not a stationary config"));
    }
    cfg.validate()?;
    let rows = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_stationary_trial(cfg, t))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ExperimentOutput {
        config: cfg.clone(),
        rows: rows.into_iter().flatten().collect(),
        tables: Vec::new(),
        snapshots: Vec::new(),
        extra: Default::default(),
    };
    let k = out.mean_of(KDGP, |r| r.rmse_field);
    let m = out.mean_of(MADGP, |r| r.rmse_field);
    out.extra.insert("kdgp_rmse_field_mean".into(), k);
    out.extra.insert("madgp_rmse_field_mean".into(), m);
    Ok(out)
}
