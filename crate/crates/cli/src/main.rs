//! `mmrec`: synthetic data, splits, training, evaluation and modality-gap
//! reports from the command line.

mod commands;
mod error;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "mmrec", version, about = "Single- and multi-branch multimodal recommenders")]
pub struct Cli {
    /// Worker threads for evaluation and sweeps (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct OutSeed {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct DataSplit {
    /// Dataset directory containing dataset.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Split directory written by `mmrec split`.
    #[arg(long)]
    pub split: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScenarioArg {
    Warm,
    UserCold,
    ItemCold,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum PhaseArg {
    Val,
    #[default]
    Test,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted-structure synthetic dataset.
    Synth {
        #[command(flatten)]
        common: OutSeed,
        /// JSON file with generator settings; the seed flag overrides its seed.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Split a dataset into train/validation/test.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: OutSeed,
        #[arg(long, value_enum, default_value = "warm")]
        scenario: ScenarioArg,
    },
    /// Train a model and write its best checkpoint.
    Train {
        #[command(flatten)]
        input: DataSplit,
        #[command(flatten)]
        common: OutSeed,
        /// JSON file with optional "model" and "train" sections.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with all report metrics.
    Eval {
        #[command(flatten)]
        input: DataSplit,
        /// Checkpoint directory written by `mmrec train`.
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        common: OutSeed,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_enum, default_value = "test")]
        phase: PhaseArg,
        /// Item modalities available at inference (default: all trained).
        #[arg(long, value_delimiter = ',')]
        modalities: Option<Vec<String>>,
    },
    /// Evaluate a checkpoint on every non-empty subset of item modalities.
    EvalGrid {
        #[command(flatten)]
        input: DataSplit,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        common: OutSeed,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_enum, default_value = "test")]
        phase: PhaseArg,
        #[arg(long, value_delimiter = ',')]
        modalities: Option<Vec<String>>,
    },
    /// Retrain over a grid of contrastive weights and temperatures.
    Sweep {
        #[command(flatten)]
        input: DataSplit,
        #[command(flatten)]
        common: OutSeed,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        taus: Vec<f64>,
    },
    /// Intra/inter-item distances and a 2-D PCA projection of the item catalog.
    Gap {
        #[command(flatten)]
        input: DataSplit,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        common: OutSeed,
    },
    /// Modality-separability probe on test-item embeddings.
    Probe {
        #[command(flatten)]
        input: DataSplit,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        common: OutSeed,
    },
    /// Paired t-test between two evaluations of the same users.
    Compare {
        /// Evaluation directory of the first run.
        #[arg(long)]
        a: PathBuf,
        /// Evaluation directory of the second run.
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "ndcg")]
        metric: String,
        #[arg(long, default_value_t = 1)]
        n_comparisons: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect a run directory's CSV files into one markdown summary.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

