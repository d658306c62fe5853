use std::process::ExitCode;

use clap::{Parser, Subcommand};

use paraformer_cli::commands::{EvalArgs, GenArgs, SearchArgs, TrainArgs};
use paraformer_cli::{cmd_eval, cmd_gen, cmd_search, cmd_train, CliError};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Memory-aware Transformer parameterization workbench.
#[derive(Parser)]
#[command(name = "paraformer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint and emit the metric report.
    Eval(EvalArgs),
    /// Grid search over model and training hyperparameters.
    Search(SearchArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Gen(a) => {
            let summary = cmd_gen(&a)?;
            println!("{summary}");
        }
        Command::Train(a) => {
            cmd_train(&a, &mut out)?;
        }
        Command::Eval(a) => {
            cmd_eval(&a, &mut out)?;
        }
        Command::Search(a) => {
            cmd_search(&a, &mut out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
