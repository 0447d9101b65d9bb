use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use opent_cli::analyze::{analyze, AnalysisSpec};
use opent_cli::compare::compare;
use opent_cli::output::write_atomic;
use opent_cli::run::{evolve, oracle};
use opent_cli::{CliError, Result, RunConfig};

#[derive(Parser)]
#[command(name = "opent", version, about = "Operator entanglement of open SU(2) spin chains")]
struct Cli {
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve an infinite chain with iTEBD.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint; earlier rows in the output
        /// directory are kept up to the checkpoint time.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evolve an open chain exactly; writes the same files as `evolve`.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Deviations between two runs on their shared observation times.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long, default_value_t = f64::INFINITY)]
        to: f64,
        /// Fail (exit 1) if any deviation reaches this value.
        #[arg(long)]
        tol: Option<f64>,
        /// Also write the JSON report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a finished run and write fits.csv.
    Analyze {
        run_dir: PathBuf,
        /// JSON analysis settings; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Directory for fits.csv; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Evolve { config, resume, out } => {
            let cfg = load_config(&config, out)?;
            let summary = evolve(&cfg, &cfg.output_dir, resume.as_deref())?;
            log::info!(
                "done: {} steps to tJ = {}, max chi {}, truncation weight {:.3e}",
                summary.steps,
                summary.time,
                summary.max_chi,
                summary.trunc_weight
            );
        }
        Command::Oracle { config, out } => {
            let cfg = load_config(&config, out)?;
            oracle(&cfg, &cfg.output_dir)?;
        }
        Command::Compare { run_a, run_b, from, to, tol, out } => {
            let report = compare(&run_a, &run_b, (from, to), tol)?;
            let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
            text.push('\n');
            print!("{text}");
            if let Some(path) = out {
                write_atomic(&path, text.as_bytes())?;
            }
            if !report.pass {
                return Err(CliError::ToleranceExceeded);
            }
        }
        Command::Analyze { run_dir, spec, out } => {
            let spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
                    serde_json::from_str::<AnalysisSpec>(&text).map_err(|e| CliError::Config(e.to_string()))?
                }
                None => AnalysisSpec::default(),
            };
            let rows = analyze(&run_dir, &spec, out.as_deref().unwrap_or(&run_dir))?;
            log::info!("wrote {rows} fit rows");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
