//! Command-line experiment runner. Every subcommand takes a JSON config plus
//! optional `--seed`, `--out`, and repeated `--override key=value` tweaks;
//! see the `harness` module for the config schema.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use vbll::evalood::MetricsReport;
use vbll::harness::{load_config, run, ExperimentConfig, Task};

#[derive(Parser)]
#[command(
    name = "vbll",
    version,
    about = "Variational Bayesian last-layer experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and evaluate it, writing a run directory
    Train(RunArgs),
    /// Re-evaluate a finished run from its checkpoint
    Eval(RunArgs),
    /// Run the wheel-bandit Thompson-sampling benchmark
    Bandit(RunArgs),
    /// Generate a synthetic dataset CSV without training
    Toy(RunArgs),
    /// Train once per point of the config's hyperparameter grid
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path config override, e.g. `train.learning_rate=0.01`
    /// (repeatable)
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = load_config(&self.config, &self.overrides)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.display().to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Render the populated metric fields on one line.
fn metrics_line(m: &MetricsReport) -> String {
    let mut parts = Vec::new();
    let mut push = |name: &str, v: Option<f64>| {
        if let Some(v) = v {
            parts.push(format!("{name} {v:.4}"));
        }
    };
    push("nll", m.nll);
    push("rmse", m.rmse);
    push("accuracy", m.accuracy);
    push("ece", m.ece);
    push("auroc", m.auroc);
    push("std_ratio", m.std_ratio);
    push("cumulative_regret", m.cumulative_regret_normalized);
    push("simple_regret", m.simple_regret);
    parts.push(format!("n_eval {}", m.n_eval));
    parts.join("  ")
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Train(args) => {
            let cfg = args.load()?;
            if cfg.task == Task::Bandit {
                bail!("task `bandit` runs via the `bandit` subcommand");
            }
            let res = run::run_experiment(&cfg)?;
            println!("{}", metrics_line(&res.metrics));
            println!("run written to {}", res.out_dir.display());
        }
        Cmd::Eval(args) => {
            let cfg = args.load()?;
            let res = run::eval_experiment(&cfg)?;
            println!("{}", metrics_line(&res.metrics));
            println!("metrics rewritten in {}", res.out_dir.display());
        }
        Cmd::Bandit(args) => {
            let cfg = args.load()?;
            if cfg.task != Task::Bandit {
                bail!("the `bandit` subcommand needs task = \"bandit\", got `{}`", cfg.task);
            }
            let res = run::run_experiment(&cfg)?;
            println!("{}", metrics_line(&res.metrics));
            println!("run written to {}", res.out_dir.display());
        }
        Cmd::Toy(args) => {
            let cfg = args.load()?;
            let path = run::write_toy_dataset(&cfg)?;
            println!("dataset written to {}", path.display());
        }
        Cmd::Sweep(args) => {
            let cfg = args.load()?;
            let path = run::run_sweep(&cfg)?;
            println!("sweep table written to {}", path.display());
        }
    }
    Ok(())
}
