//! `otda`: data generation, training, sweeps, baselines, post-hoc alignment
//! and reporting for OT-regularized domain adaptation experiments.

mod commands;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "otda", version, about = "OT-regularized domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic multi-domain benchmark.
    GenData(GenDataArgs),
    /// Train one model.
    Train(RunArgs),
    /// Train every (α, seed) cell of a grid.
    Sweep(RunArgs),
    /// Train the adversarial baseline; α is the reversal weight.
    Dann(RunArgs),
    /// Train ERM models and align their frozen features post hoc.
    Posthoc(RunArgs),
    /// Compare methods on the original and the swapped validation/test split.
    SwapEval(RunArgs),
    /// Re-emit tables and plots from the run reports under --out.
    Report(ReportArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Generator config JSON; its fields override the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Erm,
    Ot,
    Dann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Euclidean,
    Squared,
}

#[derive(Debug, Clone, Args)]
struct RunArgs {
    /// Dataset directory (or bare CSV) written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Output root.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated α grid.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// First training seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Absolute entropic ε (for posthoc: the alignment ε).
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long, action = clap::ArgAction::Set)]
    log_domain: Option<bool>,
    #[arg(long)]
    swap_val_test: bool,
    /// Training config JSON; its fields override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let message = e.render().to_string();
            emit_error("usage", message.trim());
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Dann(a) => commands::dann(&a),
        Command::Posthoc(a) => commands::posthoc(&a),
        Command::SwapEval(a) => commands::swap_eval(&a),
        Command::Report(a) => commands::report(&a),
        Command::Selftest => selftest::run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_error(e.kind(), &e.to_string());
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}

fn emit_error(kind: &str, message: &str) {
    let body = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{body}");
}
