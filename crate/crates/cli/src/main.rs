//! `afc`: run experiments, fit measured spectra, list what is available.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numeric failure.

use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use afc_core::experiment::{fit_measurement, fit_report_csv, list_experiments, run_experiment, ExperimentConfig};
use afc_core::pumping::read_absorption_csv;
use afc_core::AfcError;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afc", version, about = "Atomic frequency comb efficiency experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Fit a measured absorption spectrum (detuning_hz, alpha_per_m) with
    /// the first sequence and pump of a config.
    Fit { measured: PathBuf, config: PathBuf },
    /// List the available experiments.
    ListExperiments,
}

fn exit_code(e: &AfcError) -> u8 {
    match e {
        AfcError::Numeric(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), AfcError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let out = run_experiment(&cfg)?;
            for t in &out.tables {
                println!("{}\t{} rows", out.output_dir.join(&t.file_name).display(), t.rows);
            }
            println!("{}", out.output_dir.join("manifest.json").display());
        }
        Command::Fit { measured, config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let records = read_absorption_csv(File::open(&measured)?)?;
            let report = fit_measurement(&records, &cfg)?;
            print!("{}", fit_report_csv(&report));
        }
        Command::ListExperiments => {
            for (name, description) in list_experiments() {
                println!("{name:<20} {description}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("afc: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
