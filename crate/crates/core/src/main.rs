use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mimalloc::MiMalloc;

use pacer::actor::NoiseMode;
use pacer::cli::{self, plot, Agent};
use pacer::utility::CVAR_LEVELS;
use pacer::{PacerError, Result};

#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

#[derive(Parser)]
#[command(name = "pacer", version, about = "Distributional actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Train,
    Eval,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config file.
    Train {
        config: PathBuf,
        /// `key=value` settings applied on top of the file.
        #[arg(long = "override", num_args = 1..)]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint and print a JSON summary.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Also report the empirical CVaR of episode returns at this level.
        #[arg(long)]
        cvar: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plot smoothed eval curves of metrics files as SVG.
    Plot {
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = plot::DEFAULT_WINDOW)]
        window: usize,
    },
    /// Check that a bandit policy covers both reward modes.
    Bimodality {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = cli::DEFAULT_BIMODALITY_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dump `(tau_hat, z)` quantile values at a state-action pair as CSV.
    Quantiles {
        checkpoint: PathBuf,
        /// Comma-separated raw state.
        #[arg(long, allow_hyphen_values = true)]
        state: String,
        /// Comma-separated environment-scale action.
        #[arg(long, allow_hyphen_values = true)]
        action: String,
        #[arg(long, default_value_t = 32)]
        n: usize,
    },
    /// Dump sampled actions at a state as CSV.
    Sample {
        checkpoint: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        state: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Mode::Train)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, overrides } => {
            for run in cli::cmd_train(&config, &overrides)? {
                let last = run.rows.iter().rev().find_map(|r| r.eval);
                match last {
                    Some((mean, std)) => eprintln!("seed {}: final eval {mean:.3} +- {std:.3} -> {}", run.seed, run.metrics.display()),
                    None => eprintln!("seed {}: done -> {}", run.seed, run.metrics.display()),
                }
            }
        }
        Command::Eval { checkpoint, env, episodes, cvar, seed } => {
            if let Some(l) = cvar {
                if !CVAR_LEVELS.contains(&l) {
                    return Err(PacerError::Usage(format!("--cvar must be one of {CVAR_LEVELS:?}")));
                }
            }
            let report = cli::cmd_eval(&checkpoint, &env, episodes, cvar, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Plot { csvs, output, window } => cli::cmd_plot(&csvs, &output, window)?,
        Command::Bimodality { checkpoint, samples, seed } => {
            let report = cli::cmd_bimodality(&checkpoint, samples, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            println!("{}", if report.pass { "PASS" } else { "FAIL" });
        }
        Command::Quantiles { checkpoint, state, action, n } => {
            let agent = Agent::load(&checkpoint)?;
            print!("{}", cli::quantiles_csv(&agent, &cli::parse_vector(&state)?, &cli::parse_vector(&action)?, n)?);
        }
        Command::Sample { checkpoint, state, n, mode, seed } => {
            let agent = Agent::load(&checkpoint)?;
            let mode = match mode {
                Mode::Train => NoiseMode::Train,
                Mode::Eval => NoiseMode::Eval,
            };
            print!("{}", cli::actions_csv(&cli::sample_agent(&agent, &cli::parse_vector(&state)?, n, mode, seed)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
