//! Flat experiment configuration.
//!
//! Loading layers three sources over the per-kind defaults: a JSON object
//! file, then `key=value` overrides. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::basis::{KernelHyperparams, SpectralForm};
use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::geometry::{Domain, Point};
use crate::network::LinkModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ConsensusBench,
    Stationary,
    Dynamic,
    KernelApprox,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::ConsensusBench => "consensus-bench",
            ExperimentKind::Stationary => "stationary",
            ExperimentKind::Dynamic => "dynamic",
            ExperimentKind::KernelApprox => "kernel-approx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Sync,
    Async,
    PacketLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSampler {
    /// Weights drawn through a large basis.
    Basis,
    /// Cholesky factor of the node Gram matrix; small grids only.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Number of sensors R.
    pub sensors: usize,
    /// Number of basis functions E.
    pub basis_len: usize,
    /// Sensing steps K_max.
    pub k_max: usize,
    /// Consensus iteration cap T_max.
    pub t_max: usize,
    /// Per-sensor stop threshold on the round-to-round matrix RMSE.
    pub theta_th: f64,
    /// Threshold and window of the reported iterations-to-consensus metric.
    pub settle_threshold: f64,
    pub settle_window: usize,
    pub flag_dynamic: bool,
    /// Average-consensus gain; `1 / (deg_max + 1)` when absent.
    pub gamma: Option<f64>,
    pub link_model: LinkKind,
    pub link_p: f64,
    /// Fraction of sensors whose outgoing messages may be truncated.
    pub lossy_fraction: f64,
    /// Fixed communication radius; derived from `target_degree` when absent.
    pub d_comm: Option<f64>,
    pub target_degree: f64,
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub grid_nx: usize,
    pub grid_ny: usize,
    /// Basis box half-width is `0.5 * domain_margin` in the unit frame.
    pub domain_margin: f64,
    pub sigma_s: f64,
    pub l: f64,
    pub sigma_n: f64,
    pub l_k: f64,
    pub spectral_form: SpectralForm,
    pub trials: usize,
    pub seed: u64,
    pub out: Option<String>,
    /// Stationary truth.
    pub truth_sampler: TruthSampler,
    /// Basis size for drawing the truth; the estimator's `basis_len` when
    /// absent.
    pub truth_basis_len: Option<usize>,
    /// Pooled classic-GP reference per trial.
    pub centralized_reference: bool,
    /// Dynamic scenario.
    pub delta_k: f64,
    pub pde_time_per_step: f64,
    pub warmup_time: f64,
    pub source_x: f64,
    pub source_y: f64,
    /// Multiplies the source term; the field is linear in it.
    pub source_amplitude: f64,
    pub run_ablation: bool,
    /// Write a truth/estimate grid snapshot every this many steps (0 = never).
    pub snapshot_every: usize,
    /// Kernel study.
    pub kernel_basis_lens: Vec<usize>,
    pub kernel_grid: usize,
    /// Kernel study grid spans `[-extent, extent]^2` of offsets.
    pub kernel_extent: f64,
    /// Store measured wall time; otherwise 0 so outputs are reproducible.
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            kind,
            sensors: 50,
            basis_len: 100,
            k_max: 10,
            t_max: 15,
            theta_th: 1e-9,
            settle_threshold: 0.01,
            settle_window: 3,
            flag_dynamic: false,
            gamma: None,
            link_model: LinkKind::Sync,
            link_p: 0.3,
            lossy_fraction: 1.0,
            d_comm: None,
            target_degree: 6.0,
            xmin: 0.0,
            xmax: 1.0,
            ymin: 0.0,
            ymax: 1.0,
            grid_nx: 50,
            grid_ny: 50,
            domain_margin: 1.2,
            sigma_s: 4.0,
            l: 0.05,
            sigma_n: 0.5,
            l_k: 3600.0,
            spectral_form: SpectralForm::ThreeHalves,
            trials: 20,
            seed: 1,
            out: None,
            truth_sampler: TruthSampler::Basis,
            truth_basis_len: None,
            centralized_reference: true,
            delta_k: 25.0,
            pde_time_per_step: 0.25,
            warmup_time: 0.0,
            source_x: 6.0,
            source_y: 6.0,
            source_amplitude: 1.0,
            run_ablation: true,
            snapshot_every: 0,
            kernel_basis_lens: vec![80, 400],
            kernel_grid: 50,
            kernel_extent: 0.25,
            record_timing: false,
        };
        match kind {
            ExperimentKind::ConsensusBench => ExperimentConfig {
                sensors: 30,
                basis_len: 50,
                t_max: 60,
                theta_th: 0.0,
                trials: 100,
                ..base
            },
            ExperimentKind::Stationary => base,
            ExperimentKind::Dynamic => ExperimentConfig {
                k_max: 40,
                flag_dynamic: true,
                xmax: 10.0,
                ymax: 10.0,
                trials: 10,
                source_amplitude: 5000.0,
                ..base
            },
            ExperimentKind::KernelApprox => ExperimentConfig {
                l: 0.07,
                trials: 1,
                spectral_form: SpectralForm::Standard2d,
                ..base
            },
        }
    }

    /// Defaults, then the file, then overrides; validated.
    pub fn load(
        kind: ExperimentKind,
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut value = serde_json::to_value(Self::defaults(kind))?;
        let obj = value
            .as_object_mut()
            .expect("config serializes to an object");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            let parsed: Value = serde_json::from_str(&text)?;
            let Value::Object(map) = parsed else {
                return Err(Error::Configuration(
                    "config file must hold a JSON object".into(),
                ));
            };
            merge(obj, map)?;
        }
        let mut extra = Map::new();
        for (k, v) in overrides {
            extra.insert(k.clone(), parse_override(v));
        }
        merge(obj, extra)?;
        if obj.get("kind") != Some(&Value::String(kind.name().into())) {
            return Err(Error::Configuration(format!(
                "config kind {} does not match the {} command",
                obj.get("kind").map(|v| v.to_string()).unwrap_or_default(),
                kind.name()
            )));
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::Configuration(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Configuration(msg));
        if self.sensors == 0 || self.basis_len == 0 || self.k_max == 0 || self.trials == 0 {
            return bad("sensors, basis_len, k_max and trials must be positive".into());
        }
        if self.kind != ExperimentKind::ConsensusBench && !(self.theta_th > 0.0) {
            return bad(format!("theta_th must be positive, got {}", self.theta_th));
        }
        if self.theta_th < 0.0 || !(self.settle_threshold > 0.0) || self.settle_window == 0 {
            return bad("consensus thresholds must be positive".into());
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return bad(format!("gamma must lie in (0, 1), got {g}"));
            }
        }
        if !(0.0..=1.0).contains(&self.lossy_fraction) {
            return bad("lossy_fraction must lie in [0, 1]".into());
        }
        self.link()?.validate()?;
        if !self.domain().is_valid() {
            return bad("domain bounds are invalid".into());
        }
        self.grid()?;
        if !(self.domain_margin >= 1.0) {
            return bad("domain_margin must be at least 1".into());
        }
        self.hyperparams()?;
        if let Some(d) = self.d_comm {
            if !(d > 0.0) {
                return bad("d_comm must be positive".into());
            }
        } else if !(self.target_degree > 0.0) {
            return bad("target_degree must be positive".into());
        }
        if !(self.delta_k >= 0.0
            && self.pde_time_per_step > 0.0
            && self.warmup_time >= 0.0
            && self.source_amplitude.is_finite())
        {
            return bad("dynamic timing parameters are invalid".into());
        }
        if self.kind == ExperimentKind::KernelApprox && self.kernel_basis_lens.is_empty() {
            return bad("kernel_basis_lens is empty".into());
        }
        if self.kernel_grid < 2 || !(self.kernel_extent > 0.0) {
            return bad("kernel grid needs at least 2 points and a positive extent".into());
        }
        if self.truth_basis_len == Some(0) {
            return bad("truth_basis_len must be positive".into());
        }
        Ok(())
    }

    pub fn hyperparams(&self) -> Result<KernelHyperparams> {
        KernelHyperparams::new(self.sigma_s, self.l, self.sigma_n, self.l_k)
    }

    pub fn domain(&self) -> Domain {
        Domain::new(self.xmin, self.xmax, self.ymin, self.ymax)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.domain(), self.grid_nx, self.grid_ny)
    }

    pub fn link(&self) -> Result<LinkModel> {
        let m = match self.link_model {
            LinkKind::Sync => LinkModel::Sync,
            LinkKind::Async => LinkModel::Async { p: self.link_p },
            LinkKind::PacketLoss => LinkModel::PacketLoss { p: self.link_p },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn source(&self) -> Point {
        [self.source_x, self.source_y]
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}

fn merge(into: &mut Map<String, Value>, from: Map<String, Value>) -> Result<()> {
    for (k, v) in from {
        if !into.contains_key(&k) {
            return Err(Error::Configuration(format!("unknown config key '{k}'")));
        }
        into.insert(k, v);
    }
    Ok(())
}

/// JSON when it parses (numbers, booleans, null, arrays), a bare string
/// otherwise.
fn parse_override(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Splits `key=value`.
pub fn parse_key_value(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::Configuration(format!(
            "override '{s}' is not key=value"
        ))),
    }
}
