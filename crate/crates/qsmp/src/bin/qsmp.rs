use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qsmp::{run_to_dir, ExperimentConfig, ExperimentKind};

/// Forward-backward stochastic control laboratory.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the forward state under the candidate control.
    Simulate(Common),
    /// Solve the state BSDE along the candidate.
    SolveBsde(Common),
    /// Solve the first- and second-order adjoint equations.
    Adjoint(Common),
    /// Run the spike-variation order suite.
    Spike(Common),
    /// Check the global and local maximum principle.
    CheckSmp(Common),
    /// Run the analytic example end to end.
    Example(Common),
    /// Check the BMO formulas and inequalities.
    BmoSuite(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration merged over the defaults of the subcommand.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed; overrides the configuration.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Maximum worker threads.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
    /// Output directory; overrides the configuration.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Self::Simulate(c) => (ExperimentKind::Simulate, c),
            Self::SolveBsde(c) => (ExperimentKind::SolveBsde, c),
            Self::Adjoint(c) => (ExperimentKind::Adjoint, c),
            Self::Spike(c) => (ExperimentKind::Spike, c),
            Self::CheckSmp(c) => (ExperimentKind::CheckSmp, c),
            Self::Example(c) => (ExperimentKind::Example, c),
            Self::BmoSuite(c) => (ExperimentKind::BmoSuite, c),
        }
    }
}

const EXIT_FAILED_CHECKS: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (kind, args) = Cli::parse().command.split();

    let text = match &args.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: reading {}: {e}", path.display());
                return ExitCode::from(EXIT_ERROR);
            }
        },
        None => String::new(),
    };
    let config = match ExperimentConfig::load(&text, Some(kind), args.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let dir = args
        .out
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("qsmp-out").join(kind.name()));

    match run_to_dir(&config, &dir, args.jobs.map(|j| j as usize)) {
        Ok((output, _)) => {
            for check in &output.checks {
                let verdict = match (check.pass, check.gating) {
                    (true, _) => "PASS",
                    (false, true) => "FAIL",
                    (false, false) => "note",
                };
                println!("{verdict:4}  {}", check.name);
            }
            println!("reports written to {}", dir.display());
            if output.pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED_CHECKS)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
