//! `adk` — train, run, evaluate, ablate, and benchmark the adaptive-kernel
//! image downscaler from the command line.
//!
//! Every subcommand accepts `--config FILE` with `key=value` lines (keys are
//! the flag names with underscores); explicit flags override file values and
//! unrecognized keys are errors. Given the same `--seed`, every command's
//! outputs are deterministic except wall-clock timing fields.

mod ablate_cmd;
mod bench_cmd;
mod cfgfile;
mod downscale_cmd;
mod eval_cmd;
mod train_cmd;
mod util;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adk",
    version,
    about = "Adaptive-kernel supervised image downscaler"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a downscaling model on paired or synthetic data
    Train(train_cmd::TrainArgs),
    /// Downscale one PNG with a trained model
    Downscale(downscale_cmd::DownscaleArgs),
    /// Score predictions and classical baselines against ground truth
    Eval(eval_cmd::EvalArgs),
    /// Train every model/normalization variant under one shared budget
    Ablate(ablate_cmd::AblateArgs),
    /// Measure forward and kernel-application throughput
    Bench(bench_cmd::BenchArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => train_cmd::run(args),
        Command::Downscale(args) => downscale_cmd::run(args),
        Command::Eval(args) => eval_cmd::run(args),
        Command::Ablate(args) => ablate_cmd::run(args),
        Command::Bench(args) => bench_cmd::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
