use std::path::PathBuf;
use std::process::ExitCode;

use beamdrift::harness::config::ExperimentConfig;
use beamdrift::harness::{self, HResult, HarnessError};
use clap::{Args, Parser, Subcommand};

/// Simulate and reconstruct particle-beam micrographs under drifting beam current.
#[derive(Parser)]
#[command(name = "beamdrift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dose field and a time-resolved measurement.
    Simulate(Common),
    /// Run the configured estimators on a simulated measurement.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// measurement.csv written by `simulate`; truth.csv and dose.csv must sit beside it.
        #[arg(long)]
        measurement: PathBuf,
    },
    /// Single-pixel Monte Carlo over the relative dose error.
    SweepEpsilon(Common),
    /// Single-pixel Monte Carlo over total dose.
    SweepDose(Common),
    /// Build the MSE lookup table used by the alternating estimator.
    Table(Common),
    /// Alternating estimation with a misspecified autocorrelation.
    WrongA {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        assumed_a: f64,
    },
}

fn prepare(common: &Common) -> HResult<ExperimentConfig> {
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(HarnessError::Config(
                "flag `--threads`: must be >= 1".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| HarnessError::Config(format!("flag `--threads`: {e}")))?;
    }
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> HResult<()> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = prepare(&c)?;
            harness::cmd_simulate(&cfg)?;
            println!("wrote simulation to {}", cfg.output_dir.display());
        }
        Command::Estimate {
            common,
            measurement,
        } => {
            let cfg = prepare(&common)?;
            let report = harness::cmd_estimate(&cfg, &measurement)?;
            print!("{}", report.to_table());
        }
        Command::SweepEpsilon(c) => {
            let cfg = prepare(&c)?;
            let rows = harness::cmd_sweep_epsilon(&cfg)?;
            println!("wrote {} rows to {}", rows.len(), cfg.output_dir.display());
        }
        Command::SweepDose(c) => {
            let cfg = prepare(&c)?;
            let rows = harness::cmd_sweep_dose(&cfg)?;
            println!("wrote {} rows to {}", rows.len(), cfg.output_dir.display());
        }
        Command::Table(c) => {
            let cfg = prepare(&c)?;
            let table = harness::cmd_table(&cfg)?;
            println!(
                "wrote {} cells to {}",
                table.rows.len(),
                cfg.table_path().display()
            );
        }
        Command::WrongA { common, assumed_a } => {
            let cfg = prepare(&common)?;
            let report = harness::cmd_wrong_a(&cfg, assumed_a)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("beamdrift: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
