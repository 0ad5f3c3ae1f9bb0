use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pdelay::experiments::{self, io, ExperimentConfig, Trace, Verdict};
use pdelay::Error;

/// Delayed primal-dual splitting experiments.
#[derive(Debug, Parser)]
#[command(name = "pdelay", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write its CSV trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Trace destination; defaults to the config's `output`, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print problem constants, stepsize plans and rate certificates.
    Tune {
        #[arg(long)]
        config: PathBuf,
    },
    /// Replay a trace against the convergence theory of its configuration.
    Check {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute the reference solution and write it to a file.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGENCE: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Divergence { .. } => ExitCode::from(EXIT_DIVERGENCE),
        _ => ExitCode::from(EXIT_CONFIG),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> pdelay::Result<()> {
    match path {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            emit(text);
            Ok(())
        }
    }
}

/// Writes to stdout; a closed pipe is not an error for a CLI.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn execute(cmd: Command) -> pdelay::Result<ExitCode> {
    match cmd {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let result = experiments::run_experiment(&cfg)?;
            let dest = out.or(cfg.output.clone());
            write_output(dest.as_deref(), &result.trace.to_csv()?)?;
            if let Some(log) = &result.log {
                let last = log.records.last().expect("initial record");
                eprintln!(
                    "{} iterations, {} local updates, stop {:?}, final kkt {}",
                    log.iterations(),
                    log.activations(),
                    log.stop,
                    last.kkt.map_or("-".into(), |v| format!("{v:.3e}"))
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Tune { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            emit(&experiments::tune_report(&cfg)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { trace, config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let trace = Trace::from_csv(&std::fs::read_to_string(&trace)?)?;
            let outcome = experiments::check_trace(&cfg, &trace)?;
            emit(&format!("{}\n", outcome.report));
            Ok(match outcome.verdict {
                Verdict::Pass => {
                    emit("PASS\n");
                    ExitCode::SUCCESS
                }
                Verdict::NotApplicable => {
                    emit("NOT APPLICABLE\n");
                    ExitCode::SUCCESS
                }
                Verdict::Violation => {
                    emit("VIOLATION\n");
                    ExitCode::from(EXIT_VIOLATION)
                }
            })
        }
        Command::Oracle { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let z = experiments::oracle(&cfg)?;
            std::fs::write(&out, io::write_point(&z))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    // clap's own usage errors would exit with 2, which is reserved for divergence
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    execute(cli.command).unwrap_or_else(fail)
}
