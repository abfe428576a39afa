use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tsprox::experiment::{self, ExperimentConfig, RunOptions, PRESET_NAMES};
use tsprox::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CAPPED: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_CHECKS: u8 = 5;

/// Runs time-smoothed proximal-gradient experiments and re-verifies their traces.
#[derive(Parser, Debug)]
#[command(name = "tsprox", version)]
struct Cli {
    /// experiment configuration (TOML or JSON)
    #[arg(long, value_name = "PATH", conflicts_with_all = ["preset", "verify"])]
    config: Option<PathBuf>,

    /// built-in experiment
    #[arg(long, value_name = "NAME", value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
    preset: Option<String>,

    /// base seed, overriding the configuration
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    /// artifact directory
    #[arg(long, value_name = "DIR", env = "TSPROX_OUT", default_value = "tsprox-out")]
    out: PathBuf,

    /// worker threads (default: all cores)
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,

    /// re-verify trace files or directories
    #[arg(long, value_name = "PATHS", num_args = 0.., conflicts_with = "preset")]
    verify: Option<Vec<PathBuf>>,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Capped { .. } => EXIT_CAPPED,
        Error::Io(_) | Error::Schema(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e))
}

fn run(cli: &Cli) -> ExitCode {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => {
            if !path.is_file() {
                eprintln!("error: config file {} not found", path.display());
                return ExitCode::from(EXIT_USAGE);
            }
            match ExperimentConfig::load(path) {
                Ok(c) => c,
                Err(Error::Io(e)) => return fail(&Error::Io(e)),
                // unparsable configuration text is a configuration error
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            }
        }
        (None, Some(name)) => match experiment::preset(name) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        },
        (None, None) => {
            eprintln!("error: one of --config, --preset or --verify is required");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let opts = RunOptions {
        jobs: cli.jobs,
        out: Some(cli.out.clone()),
    };
    match experiment::run_experiment(&cfg, &opts) {
        Ok(report) => {
            for c in &report.checks {
                println!(
                    "{:<6} {:<40} measured {:.6e} bound {:.6e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.bound
                );
            }
            for q in &report.reported {
                println!("INFO   {:<40} {:.6e}", q.name, q.value);
            }
            println!("artifacts: {}", cli.out.join(&report.experiment).display());
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECKS)
            }
        }
        Err(e) => fail(&e),
    }
}

fn verify(paths: &[PathBuf]) -> ExitCode {
    match experiment::verify_bounds(paths) {
        Ok(report) => {
            for f in &report.files {
                println!("{} {}", if f.passed { "PASS" } else { "FAIL" }, f.path.display());
                for c in f.checks.iter().filter(|c| !c.passed) {
                    println!("  {} measured {:.17e} bound {:.17e}", c.name, c.measured, c.bound);
                }
            }
            println!("verified {} trace file(s)", report.files.len());
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECKS)
            }
        }
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match &cli.verify {
        Some(paths) => verify(paths),
        None => run(&cli),
    }
}
