use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nlmi_cli::{commands, CliError, Overrides, RunConfig};
use nlmi_core::graph::Split;
use nlmi_core::layers::{BaseKind, Terms};
use nlmi_core::verification::LayerVariant;

/// Message-passing graph networks with neighbour-level message interaction
/// encoding.
///
/// Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
/// failure (non-finite values or a failed gradient check).
#[derive(Debug, Parser)]
#[command(name = "nlmi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset from a spec (or run) file and save it as JSON.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the seed in the dataset file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model per seed; writes metrics, checkpoints and a summary.
    Train(RunArgs),
    /// Score a checkpoint on one split of a saved dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
    },
    /// Finite-difference gradient check of one layer on a random graph.
    Gradcheck {
        #[arg(long, default_value = "nlmi-gatedgcn")]
        variant: LayerVariant,
        #[arg(long, default_value_t = 8)]
        width: usize,
        #[arg(long, default_value_t = 6)]
        nodes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Train the four term subsets of an NLMI model and tabulate them.
    Ablate(RunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    base: Option<BaseKind>,
    #[arg(long)]
    nlmi: Option<OnOff>,
    /// Comma-separated subset of self,msg,enc.
    #[arg(long)]
    terms: Option<Terms>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            layers: self.layers,
            base: self.base,
            nlmi: self.nlmi.map(|v| matches!(v, OnOff::On)),
            terms: self.terms,
        })?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Gen { config, out, seed } => commands::gen(&config, &out, seed),
        Command::Train(args) => commands::train(&args.resolve()?),
        Command::Eval {
            checkpoint,
            dataset,
            split,
            batch_size,
        } => commands::eval(&checkpoint, &dataset, split, batch_size),
        Command::Gradcheck {
            variant,
            width,
            nodes,
            seed,
            step,
            tol,
        } => commands::gradcheck(variant, width, nodes, seed, step, tol),
        Command::Ablate(args) => commands::ablate(&args.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
