use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metalearn::bench::{registry_listing, run_experiment, ExperimentConfig, RunOptions};
use metalearn::parallel::Workers;
use metalearn::Error;

#[derive(Parser)]
#[command(name = "metalearn", version, about = "Meta-learning benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train one algorithm on one benchmark and write a result file.
    Run(RunArgs),
    /// Print the registered tasksets and algorithms.
    List,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    benchmark: String,
    #[arg(long)]
    algorithm: String,
    #[arg(long, default_value_t = 5)]
    ways: usize,
    #[arg(long, default_value_t = 1)]
    shots: usize,
    #[arg(long, default_value_t = 10)]
    query_shots: usize,
    #[arg(long, default_value_t = 1)]
    adapt_steps: usize,
    #[arg(long, default_value_t = 0.01)]
    inner_lr: f64,
    #[arg(long, default_value_t = 0.001)]
    outer_lr: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 4)]
    task_batch: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Record wall-clock time in the result file (breaks byte-identical reruns).
    #[arg(long)]
    record_time: bool,
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::InvalidArgument(_))
}

fn run(args: RunArgs) -> Result<(), Error> {
    let config = ExperimentConfig {
        benchmark: args.benchmark,
        algorithm: args.algorithm,
        ways: args.ways,
        shots: args.shots,
        query_shots: args.query_shots,
        adapt_steps: args.adapt_steps,
        inner_lr: args.inner_lr,
        outer_lr: args.outer_lr,
        iterations: args.iterations,
        task_batch: args.task_batch,
        seed: args.seed,
    };
    config.validate()?;
    let options = RunOptions {
        workers: Workers::from_env()?,
        record_time: args.record_time,
        ..RunOptions::default()
    };
    let started = std::time::Instant::now();
    let result = run_experiment(&config, &options)?;
    result.write(&args.output)?;
    eprintln!(
        "{} {} on {}: {} {:.4} ± {:.4} (untrained {:.4}) in {:.1}s -> {}",
        config.algorithm,
        config.iterations,
        config.benchmark,
        result.metric,
        result.summary.mean,
        result.summary.std,
        result.baseline.mean,
        started.elapsed().as_secs_f64(),
        args.output.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            print!("{}", registry_listing());
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
            }
        },
    }
}
