use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

/// Experiments and verification for maximum-variation averaging optimizers.
#[derive(Parser, Debug)]
#[command(name = "maxva-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Finite-sample non-convergence problem: convergence fractions and S1/S2.
    Counterexample(CounterexampleArgs),
    /// Noisy quadratic model: learning-rate (and β) sweeps, best-config table.
    Nqm(NqmArgs),
    /// Logistic regression / tanh MLP on Gaussian blobs: loss curves.
    Toyml(ToymlArgs),
    /// Oracle suites; exits nonzero on any disagreement.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Number of seeded runs.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Steps per run.
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Master seed.
    #[arg(long, env = "MAXVA_LAB_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// key=value file of defaults for any long flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct OptimizerArgs {
    /// madam, lamadam, adam, amsgrad, laprop, adabound or sgd.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// First-moment coefficient α.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Second-moment β for fixed-β algorithms.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub beta_lower: Option<f64>,
    #[arg(long)]
    pub beta_upper: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Denominator guard of the adaptive β rule.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Track the running max of the second moment.
    #[arg(long)]
    pub amsgrad: bool,
}

#[derive(Args, Debug)]
pub struct CounterexampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub opt: OptimizerArgs,
    /// Initial iterate.
    #[arg(long)]
    pub theta0: Option<f64>,
    /// Aggregate every this many steps.
    #[arg(long)]
    pub record_every: Option<u64>,
    /// Also write one row per run and recorded step.
    #[arg(long)]
    pub per_run: bool,
}

#[derive(Args, Debug)]
pub struct NqmArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub opt: OptimizerArgs,
    /// Curvatures, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub h: Option<Vec<f64>>,
    /// Noise scale σ.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Learning-rate grid, comma-separated (ignored when --eta is set).
    #[arg(long, value_delimiter = ',')]
    pub etas: Option<Vec<f64>>,
    /// β grid for fixed-β algorithms (ignored when --beta is set).
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long)]
    pub record_every: Option<u64>,
    #[arg(long)]
    pub per_run: bool,
}

#[derive(Args, Debug)]
pub struct ToymlArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub opt: OptimizerArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// logistic or mlp.
    #[arg(long)]
    pub model: Option<String>,
    /// Hidden units of the MLP.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Batch t has size min(t, n_samples).
    #[arg(long)]
    pub batch_growth: bool,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Moving-average window for the smoothed loss column.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, env = "MAXVA_LAB_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// beta-oracle, trajectories, reduction, gradients, invariants or all.
    #[arg(long)]
    pub suite: Option<String>,
    /// Cases per suite (default: each suite's own).
    #[arg(long)]
    pub n: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Counterexample(a) => commands::counterexample(a),
        Command::Nqm(a) => commands::nqm(a),
        Command::Toyml(a) => commands::toyml(a),
        Command::Verify(a) => commands::verify(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
