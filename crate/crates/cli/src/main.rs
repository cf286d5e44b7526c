mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use envisions_core::env::{EnvKind, Split};

/// Environment-guided self-training experiments on synthetic symbolic tasks.
#[derive(Parser, Debug)]
#[command(name = "envisions", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a task dataset with witness solutions.
    GenData(GenDataArgs),
    /// Run a self-training method from a JSON config.
    Run(RunArgs),
    /// Greedy solve rate of a checkpoint on one dataset split.
    Eval(EvalArgs),
    /// Recompute analysis exports from a run directory.
    Analyze(AnalyzeArgs),
    /// Merge the solve-rate curves of several runs into one CSV.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    env: EnvKind,
    /// Held-in tasks.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n_train: u64,
    #[arg(long, default_value_t = 50)]
    n_held_out: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; receives `tasks.jsonl` and `witnesses.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Exploration threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory written by `gen-data` (or a run's `dataset/`).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: Split,
    /// Give failed tasks one greedy refinement attempt.
    #[arg(long)]
    with_refine: bool,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Run directory written by `run`.
    #[arg(long)]
    run_dir: PathBuf,
    /// Where to write the exports; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// At least two run directories.
    #[arg(long, num_args = 2.., required = true)]
    runs: Vec<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

/// Input the user has to fix; exits with status 2 like argument errors.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a.env, a.n_train as usize, a.n_held_out as usize, a.seed, &a.out),
        Command::Run(a) => commands::run(&a.config, &a.out_dir, a.workers),
        Command::Eval(a) => commands::eval(&a.checkpoint, &a.dataset, a.split, a.with_refine),
        Command::Analyze(a) => commands::analyze(&a.run_dir, a.out.as_deref()),
        Command::Compare(a) => commands::compare(&a.runs, &a.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut message = e.to_string();
            for cause in e.chain().skip(1) {
                let cause = cause.to_string();
                if !message.contains(&cause) {
                    message = format!("{message}: {cause}");
                }
            }
            eprintln!("error: {message}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
