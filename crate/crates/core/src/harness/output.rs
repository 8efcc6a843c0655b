use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{mean, std_dev};
use crate::error::Result;

/// One `results.csv` row. Metrics that do not apply to a method are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub method: String,
    #[serde(rename = "R")]
    pub sensors: usize,
    #[serde(rename = "E")]
    pub basis_len: usize,
    pub rmse_field: f64,
    pub rmse_centralized: f64,
    pub consensus_iters_mean: f64,
    pub msg_bytes: usize,
    pub wall_ms: u64,
}

/// Extra CSV written next to `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file_name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file_name: &str, header: &[&str]) -> Self {
        Table {
            file_name: file_name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub rows: Vec<TrialRow>,
    pub tables: Vec<Table>,
    /// Grid snapshots as `(file name, csv text)`.
    pub snapshots: Vec<(String, String)>,
    /// Experiment-specific scalar results for `summary.json`.
    pub extra: BTreeMap<String, f64>,
}

impl ExperimentOutput {
    pub fn rows_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a TrialRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn mean_of(&self, method: &str, metric: impl Fn(&TrialRow) -> f64) -> f64 {
        let xs: Vec<f64> = self.rows_for(method).map(metric).collect();
        mean(&xs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn stat(xs: &[f64]) -> Stat {
    let finite: Vec<f64> = xs.iter().copied().filter(|v| v.is_finite()).collect();
    Stat {
        mean: mean(&finite),
        std: std_dev(&finite),
        n: finite.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: String,
    pub seed: u64,
    pub trials: usize,
    pub methods: BTreeMap<String, BTreeMap<String, Stat>>,
    pub extra: BTreeMap<String, f64>,
}

pub fn summarize(out: &ExperimentOutput) -> Summary {
    let mut methods: BTreeMap<String, BTreeMap<String, Stat>> = BTreeMap::new();
    let names: std::collections::BTreeSet<&str> =
        out.rows.iter().map(|r| r.method.as_str()).collect();
    for name in names {
        let rows: Vec<&TrialRow> = out.rows_for(name).collect();
        let col =
            |f: &dyn Fn(&TrialRow) -> f64| stat(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        let mut m = BTreeMap::new();
        m.insert("rmse_field".to_string(), col(&|r| r.rmse_field));
        m.insert("rmse_centralized".to_string(), col(&|r| r.rmse_centralized));
        m.insert(
            "consensus_iters_mean".to_string(),
            col(&|r| r.consensus_iters_mean),
        );
        m.insert("msg_bytes".to_string(), col(&|r| r.msg_bytes as f64));
        m.insert("wall_ms".to_string(), col(&|r| r.wall_ms as f64));
        methods.insert(name.to_string(), m);
    }
    Summary {
        kind: out.config.kind.name().to_string(),
        seed: out.config.seed,
        trials: out.config.trials,
        methods,
        extra: out.extra.clone(),
    }
}

pub fn write_results_csv(rows: &[TrialRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<TrialRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<TrialRow>, _>>()?;
    Ok(rows)
}

/// Writes `results.csv`, `summary.json`, the extra tables and snapshots.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_results_csv(&out.rows, &dir.join("results.csv"))?;
    let summary = serde_json::to_string_pretty(&summarize(out))?;
    fs::write(dir.join("summary.json"), summary + "\n")?;
    for t in &out.tables {
        let mut w = csv::Writer::from_path(dir.join(&t.file_name))?;
        w.write_record(&t.header)?;
        for row in &t.rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    for (name, text) in &out.snapshots {
        fs::write(dir.join(name), text)?;
    }
    Ok(())
}
