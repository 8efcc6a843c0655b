use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kdgp_core::harness::config::parse_key_value;
use kdgp_core::harness::{run_experiment, write_outputs, ExperimentConfig, ExperimentKind};

/// Distributed GP field-estimation simulator.
#[derive(Parser, Debug)]
#[command(name = "kdgp-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dual-extrema versus average consensus on random matrices.
    ConsensusBench(RunArgs),
    /// K-DGP versus MADGP on sampled stationary fields.
    Stationary(RunArgs),
    /// Convection-diffusion field with and without temporal prediction.
    Dynamic(RunArgs),
    /// Exact versus reduced-rank kernel cross-sections.
    KernelApprox(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON object with config keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::ConsensusBench(a) => (ExperimentKind::ConsensusBench, a),
        Command::Stationary(a) => (ExperimentKind::Stationary, a),
        Command::Dynamic(a) => (ExperimentKind::Dynamic, a),
        Command::KernelApprox(a) => (ExperimentKind::KernelApprox, a),
    };
    let mut overrides = args
        .set
        .iter()
        .map(|s| parse_key_value(s))
        .collect::<kdgp_core::Result<Vec<_>>>()?;
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(trials) = args.trials {
        overrides.push(("trials".into(), trials.to_string()));
    }
    if let Some(out) = &args.out {
        overrides.push(("out".into(), serde_json_string(&out.to_string_lossy())));
    }
    let cfg = ExperimentConfig::load(kind, args.config.as_deref(), &overrides)
        .with_context(|| format!("loading {} config", kind.name()))?;
    if args.print_config {
        println!("{cfg:#?}");
        return Ok(());
    }
    let out_dir = PathBuf::from(
        cfg.out
            .clone()
            .unwrap_or_else(|| format!("out/{}", kind.name())),
    );
    let output = run_experiment(&cfg).with_context(|| format!("running {}", kind.name()))?;
    write_outputs(&output, &out_dir)
        .with_context(|| format!("writing to {}", out_dir.display()))?;

    let summary = kdgp_core::harness::output::summarize(&output);
    for (method, stats) in &summary.methods {
        let field = stats.get("rmse_field").map_or(f64::NAN, |s| s.mean);
        let central = stats.get("rmse_centralized").map_or(f64::NAN, |s| s.mean);
        let iters = stats
            .get("consensus_iters_mean")
            .map_or(f64::NAN, |s| s.mean);
        println!(
            "{method:<16} rmse_field={field:.6e} rmse_centralized={central:.6e} iters={iters:.2}"
        );
    }
    for (k, v) in &summary.extra {
        println!("{k} = {v}");
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

/// Quoted so path strings survive the JSON-or-string override parsing.
fn serde_json_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}
