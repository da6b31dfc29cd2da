use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use elastolod_cli::{compare, run, Experiment, ExperimentConfig, RunError, Table};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVE: u8 = 3;

#[derive(Parser)]
#[command(name = "elastolod", version, about = "Run elastic Helmholtz experiments and compare their CSV output")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Flat `key = value` config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory for the CSV and field dumps.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Worker threads; 0 uses all cores. Overrides the config.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,

    /// Experiment name. Overrides the config.
    #[arg(long, value_name = "NAME")]
    experiment: Option<Experiment>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-column maximum relative deltas between two result files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Largest accepted delta outside the timing columns.
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Some(Command::Compare { a, b, tol }) => run_compare(&a, &b, tol),
        None => run_experiment(&cli),
    }
}

fn run_compare(a: &std::path::Path, b: &std::path::Path, tol: f64) -> ExitCode {
    let (ta, tb) = match (Table::read(a), Table::read(b)) {
        (Ok(ta), Ok(tb)) => (ta, tb),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let report = compare(&ta, &tb);
    print!("{}", report.render());
    if report.keys_match() && report.max_non_timing() <= tol {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run_experiment(cli: &Cli) -> ExitCode {
    let loaded = match &cli.config {
        Some(path) => ExperimentConfig::load(path, cli.experiment),
        None => match cli.experiment {
            Some(e) => Ok(ExperimentConfig::defaults(e)),
            None => {
                eprintln!("error: give --config or --experiment");
                return ExitCode::from(EXIT_CONFIG);
            }
        },
    };
    let mut cfg = match loaded {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(n) = cli.threads {
        cfg.threads = n;
    }
    match run(&cfg, Some(&cli.out)) {
        Ok(outcome) => {
            if let Some(path) = &outcome.csv {
                log::info!("wrote {}", path.display());
            }
            for note in &outcome.notes {
                log::info!("{note}");
            }
            if outcome.failures > 0 {
                eprintln!("{} solve(s) failed", outcome.failures);
                ExitCode::from(EXIT_SOLVE)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
