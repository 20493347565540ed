use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pmscast::config::{LoadError, Scenario, FULL_PROFILES, FULL_TRIALS};
use pmscast::harness::{self, ExperimentPlan, HarnessError, Series, SweepParam};

/// Metasurface multicast link simulator.
///
/// Output is CSV with header `series,sweep_var,sweep_value,user_or_min,mean,stderr,seed`.
/// Exit codes: 0 success, 2 configuration error, 3 I/O error.
#[derive(Debug, Parser)]
#[command(name = "pmscast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analytic and simulated rates of one configuration, with per-user rows.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// 1000 profiles x 1000 trials instead of the configured counts.
        #[arg(long)]
        full: bool,
        /// Also write channel, estimate and allocation dumps into this directory.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Desk-scale analog of a figure: f2_rate_vs_snr, f3_rate_vs_L_beta,
    /// f4_rate_vs_nrf, f5_rate_vs_L_mph, f6_rate_vs_mph, f7_rate_vs_K, f_necs.
    Figure {
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        full: bool,
    },
    /// Sweep one configuration key over a list of values.
    ///
    /// Numeric power control (power_control = "numeric") searches the
    /// simplex by pairwise exchange: step 1e-2 refined to 1e-4, at most 1e5
    /// rate evaluations per profile.
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_hyphen_values = true
        )]
        values: Vec<f64>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        full: bool,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Load(LoadError::Io { .. }) | Self::Harness(HarnessError::Io { .. }) => 3,
            _ => 2,
        }
    }
}

fn load(path: &PathBuf, full: bool) -> Result<Scenario, CliError> {
    let mut s = Scenario::load(path)?;
    if full {
        s.simulation.trials = FULL_TRIALS;
        s.simulation.profiles = FULL_PROFILES;
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            full,
            dump,
        } => {
            let scenario = load(&config, full)?;
            let plan = ExperimentPlan {
                scenario: "simulate".into(),
                series: vec![Series::Analytic, Series::Numeric],
                per_user: true,
                ..ExperimentPlan::sweep(&scenario, SweepParam::Rho, vec![scenario.system.rho], seed)
            };
            let rows = harness::run_scenario(&plan)?;
            harness::write_rows_to(&out, &rows)?;
            if let Some(dir) = dump {
                harness::dump_artifacts(&scenario, seed, &dir)?;
            }
        }
        Command::Figure {
            id,
            seed,
            out,
            full,
        } => {
            let rows = harness::figure(&id, seed, full)?;
            harness::write_rows_to(&out, &rows)?;
        }
        Command::Sweep {
            param,
            values,
            config,
            seed,
            out,
            full,
        } => {
            let scenario = load(&config, full)?;
            let rows = harness::sweep(&scenario, &param, &values, seed)?;
            harness::write_rows_to(&out, &rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
