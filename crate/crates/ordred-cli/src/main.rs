//! `ordred` — fit, reduce, dimension selection, simulation, and benchmark
//! front end.

mod cmd;
mod config;
mod io;

use clap::{Parser, Subcommand};

/// Exit codes: 0 success, 2 input/validation, 3 numerical, 4 internal.
fn exit_code(err: &ordred::Error) -> i32 {
    if err.is_validation() {
        2
    } else {
        match err {
            ordred::Error::Io(_) => 2,
            ordred::Error::Serde(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ordred",
    about = "Supervised dimension reduction for ordinal predictors",
    version
)]
struct Cli {
    /// Worker threads (default: available parallelism). Results do not
    /// depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a CSV dataset and write model.json plus a report.
    Fit(cmd::fit::FitArgs),
    /// Compute the reduction R(x) for each row of a CSV file.
    Reduce(cmd::reduce::ReduceArgs),
    /// Infer the reduction dimension.
    SelectDim(cmd::select_dim::SelectDimArgs),
    /// Generate synthetic replicates from a design file and evaluate fits.
    Simulate(cmd::simulate::SimulateArgs),
    /// Run a named benchmark experiment.
    Benchmark(cmd::benchmark::BenchmarkArgs),
    /// Compute the normalized single-index reduction over a dataset.
    SesIndex(cmd::ses_index::SesIndexArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        // Determinism does not depend on the pool size; this only bounds
        // parallelism.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let result = match cli.command {
        Command::Fit(args) => cmd::fit::run(args),
        Command::Reduce(args) => cmd::reduce::run(args),
        Command::SelectDim(args) => cmd::select_dim::run(args),
        Command::Simulate(args) => cmd::simulate::run(args),
        Command::Benchmark(args) => cmd::benchmark::run(args),
        Command::SesIndex(args) => cmd::ses_index::run(args),
    };
    if let Err(err) = result {
        let code = exit_code(&err);
        let kind = match code {
            2 => "validation",
            3 => "numerical",
            _ => "internal",
        };
        let doc = serde_json::json!({
            "error": { "kind": kind, "message": err.to_string() }
        });
        eprintln!("{doc}");
        std::process::exit(code);
    }
}
