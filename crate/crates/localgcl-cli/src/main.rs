use clap::Parser;

use localgcl_cli::commands::{self, AblateArgs, EvalArgs, ProbeArgs, TrainArgs};

/// Graph contrastive learning with a local reconstruction term.
#[derive(Debug, Parser)]
#[command(name = "localgcl", version, about)]
enum Cli {
    /// Train a model and write manifest, metrics and checkpoint
    Train(TrainArgs),
    /// Score a checkpoint with a k-fold linear probe
    Eval(EvalArgs),
    /// Sweep or compare λ schedules, writing CSV summaries
    Ablate(AblateArgs),
    /// Compare two checkpoints' embedding shift under perturbations
    Probe(ProbeArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli {
        Cli::Train(args) => commands::run_train(args),
        Cli::Eval(args) => commands::run_eval(args),
        Cli::Ablate(args) => commands::run_ablate(args),
        Cli::Probe(args) => commands::run_probe(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        let mut source = std::error::Error::source(&err);
        while let Some(cause) = source {
            eprintln!("  caused by: {cause}");
            source = cause.source();
        }
        std::process::exit(err.exit_code());
    }
}
