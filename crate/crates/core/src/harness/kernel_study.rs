//! Exact against reduced-rank kernel on a grid of offsets from the domain
//! centre.

use super::config::{ExperimentConfig, ExperimentKind};
use super::output::{ExperimentOutput, Table, TrialRow};
use crate::basis::BasisSet;
use crate::error::{invalid, Result};
use crate::geometry::Point;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSeries {
    /// `None` for the exact kernel.
    pub basis_len: Option<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelStudy {
    /// Offsets `(dx, dy)` in the unit frame.
    pub offsets: Vec<Point>,
    pub exact: Vec<f64>,
    pub approx: Vec<KernelSeries>,
}

impl KernelStudy {
    pub fn mse(&self, basis_len: usize) -> Option<f64> {
        let s = self
            .approx
            .iter()
            .find(|s| s.basis_len == Some(basis_len))?;
        let n = self.exact.len() as f64;
        Some(
            self.exact
                .iter()
                .zip(&s.values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n,
        )
    }
}

/// Evaluates `k(c, c + d)` for every offset `d` on an `n x n` grid over
/// `[-extent, extent]^2`, with `c` the domain centre. `E = 0` gives the
/// empty expansion, identically zero.
pub fn kernel_study(cfg: &ExperimentConfig) -> Result<KernelStudy> {
    let hp = cfg.hyperparams()?;
    let n = cfg.kernel_grid;
    let step = 2.0 * cfg.kernel_extent / (n - 1) as f64;
    let offsets: Vec<Point> = (0..n)
        .flat_map(|iy| (0..n).map(move |ix| (ix, iy)))
        .map(|(ix, iy)| {
            [
                -cfg.kernel_extent + ix as f64 * step,
                -cfg.kernel_extent + iy as f64 * step,
            ]
        })
        .collect();
    let domain = cfg.domain();
    let center = domain.center();
    let scale = domain.width().max(domain.height());
    let points: Vec<Point> = offsets
        .iter()
        .map(|d| [center[0] + d[0] * scale, center[1] + d[1] * scale])
        .collect();
    let mut exact = None;
    let mut approx = Vec::new();
    for &e in &cfg.kernel_basis_lens {
        if e == 0 {
            approx.push(KernelSeries {
                basis_len: Some(0),
                values: vec![0.0; points.len()],
            });
            continue;
        }
        let basis = BasisSet::for_domain(e, &domain, cfg.domain_margin, &hp, cfg.spectral_form)?;
        if exact.is_none() {
            exact = Some(
                points
                    .iter()
                    .map(|p| basis.exact_kernel(&center, p))
                    .collect::<Vec<_>>(),
            );
        }
        let values = points
            .iter()
            .map(|p| basis.approx_kernel(&center, p))
            .collect::<Result<Vec<_>>>()?;
        approx.push(KernelSeries {
            basis_len: Some(e),
            values,
        });
    }
    let exact = match exact {
        Some(v) => v,
        None => offsets
            .iter()
            .map(|d| crate::basis::se_kernel(&[0.0, 0.0], d, &hp))
            .collect(),
    };
    Ok(KernelStudy {
        offsets,
        exact,
        approx,
    })
}

pub fn run_kernel_study(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if cfg.kind != ExperimentKind::KernelApprox {
        return Err(invalid("configuration is not a kernel-approx config"));
    }
    cfg.validate()?;
    let study = kernel_study(cfg)?;
    let mut table = Table::new("kernel_approx.csv", &["series", "dx", "dy", "value"]);
    let mut push = |name: &str, values: &[f64]| {
        for (d, v) in study.offsets.iter().zip(values) {
            table.rows.push(vec![
                name.to_string(),
                d[0].to_string(),
                d[1].to_string(),
                v.to_string(),
            ]);
        }
    };
    push("exact", &study.exact);
    for s in &study.approx {
        push(&format!("E={}", s.basis_len.unwrap_or(0)), &s.values);
    }
    let mut out = ExperimentOutput {
        config: cfg.clone(),
        rows: Vec::new(),
        tables: vec![table],
        snapshots: Vec::new(),
        extra: Default::default(),
    };
    for s in &study.approx {
        let e = s.basis_len.unwrap_or(0);
        let mse = study.mse(e).unwrap_or(f64::NAN);
        out.extra.insert(format!("mse_E{e}"), mse);
        out.rows.push(TrialRow {
            trial: 0,
            method: format!("approx_E{e}"),
            sensors: 0,
            basis_len: e,
            rmse_field: mse.sqrt(),
            rmse_centralized: f64::NAN,
            consensus_iters_mean: f64::NAN,
            msg_bytes: 0,
            wall_ms: 0,
        });
    }
    Ok(out)
}
