//! Experiment CLI: configuration-driven solves, field evaluations, oracle
//! comparisons, property suites, and manifest summaries.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::manifest::{summary_csv, summary_table, RunManifest};

#[derive(Parser)]
#[command(
    name = "rgbdsde",
    about = "Monte Carlo experiments for reflected generalized backward doubly stochastic equations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Path to the JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed (and RGBDSDE_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output` (or `out`).
    #[arg(long)]
    out: Option<String>,
    /// Caps worker threads; 0 keeps the default.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run one backward solve and export the solution arrays.
    Solve(#[command(flatten)] RunArgs),
    /// Evaluate the solution field on the configured probes.
    Field(#[command(flatten)] RunArgs),
    /// Run the finite-difference oracle, optionally against the field.
    Oracle(#[command(flatten)] RunArgs),
    /// Run the configured property checks.
    Properties(#[command(flatten)] RunArgs),
    /// Tabulate manifests from earlier runs.
    Summarize {
        /// Manifest files to summarize.
        manifests: Vec<PathBuf>,
        /// Also write a long-format CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn run(command_name: &str, args: &RunArgs) -> ExitCode {
    configure_threads(args.threads);
    let exp = match config::load_config_file(&args.config, args.seed) {
        Ok(exp) => exp,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match commands::run_experiment(command_name, &exp, args.out.as_deref()) {
        Ok((manifest, path)) => {
            if let Some(err) = &manifest.error {
                eprintln!("error: {err}");
            }
            println!(
                "{command_name}: {} (digest {}, manifest {})",
                if manifest.pass { "pass" } else { "FAIL" },
                &manifest.spec_digest[..12],
                path.display()
            );
            if manifest.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn summarize(manifests: &[PathBuf], out: Option<&PathBuf>) -> ExitCode {
    if manifests.is_empty() {
        eprintln!("error: summarize needs at least one manifest");
        return ExitCode::from(1);
    }
    let mut loaded = Vec::new();
    for path in manifests {
        match RunManifest::read(path) {
            Ok(m) => loaded.push((path.display().to_string(), m)),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
    }
    print!("{}", summary_table(&loaded));
    if let Some(path) = out {
        if let Err(e) = rgbdsde::export::write_csv(path, &summary_csv(&loaded)) {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    if loaded.iter().all(|(_, m)| m.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Solve(args) => run("solve", args),
        Command::Field(args) => run("field", args),
        Command::Oracle(args) => run("oracle", args),
        Command::Properties(args) => run("properties", args),
        Command::Summarize { manifests, out } => summarize(manifests, out.as_ref()),
    }
}
