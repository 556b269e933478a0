use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdiv::commands::{Command, RunConfig};
use hdiv::io::OutputFormat;
use hdiv::{Alternative, BetaGrid, Error};

#[derive(Parser)]
#[command(name = "hdiv", version, about = "Many-instrument IV test, simulation designs and Monte Carlo tables")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Test H0: beta = beta0 on a CSV dataset (header y,x,z1..zK).
    Test {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        beta0: f64,
        #[command(flatten)]
        level: Level,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Rejection-rate table over a grid of simulation cells.
    Simulate {
        /// JSON grid configuration.
        #[arg(long, conflicts_with = "table1_defaults", required_unless_present = "table1_defaults")]
        config: Option<PathBuf>,
        /// Built-in grid: N = 400, three error processes, 180 cells.
        #[arg(long)]
        table1_defaults: bool,
        #[arg(long)]
        reps: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Confidence set for beta by inverting the test over a grid.
    Invert {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        lo: f64,
        #[arg(long, allow_negative_numbers = true)]
        hi: f64,
        #[arg(long)]
        steps: usize,
        #[command(flatten)]
        level: Level,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Kolmogorov-Smirnov check of the statistic's null distribution.
    Diagnose {
        #[arg(long, required = true)]
        null_normality: bool,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 2000)]
        reps: u64,
        #[arg(long)]
        seed: u64,
        /// Added to every statistic (negative control).
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        shift: f64,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Args)]
struct Level {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long = "alt", value_enum, default_value_t = Alt::Greater)]
    alternative: Alt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Alt {
    Greater,
    TwoSided,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Markdown,
}

impl From<Alt> for Alternative {
    fn from(a: Alt) -> Self {
        match a {
            Alt::Greater => Alternative::Greater,
            Alt::TwoSided => Alternative::TwoSided,
        }
    }
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
            Format::Markdown => OutputFormat::Markdown,
        }
    }
}

/// `--threads`, else `HDIV_THREADS`, else the hardware default.
fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, Error> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("HDIV_THREADS") {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(Error::Validation(format!("HDIV_THREADS must be a positive integer, got `{raw}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn build(cli: Cli) -> Result<RunConfig, Error> {
    let cfg = match cli.command {
        Cmd::Test { data, beta0, level, format } => RunConfig {
            data_path: Some(data),
            beta0,
            alpha: level.alpha,
            alternative: level.alternative.into(),
            output_format: format.into(),
            ..RunConfig::new(Command::Test)
        },
        Cmd::Simulate { config, table1_defaults, reps, seed, threads, format } => RunConfig {
            config_path: config,
            table1_defaults,
            reps,
            seed,
            threads: resolve_threads(threads)?,
            output_format: format.into(),
            ..RunConfig::new(Command::Simulate)
        },
        Cmd::Invert { data, lo, hi, steps, level, format } => RunConfig {
            data_path: Some(data),
            grid: Some(BetaGrid { lo, hi, steps }),
            alpha: level.alpha,
            alternative: level.alternative.into(),
            output_format: format.into(),
            ..RunConfig::new(Command::Invert)
        },
        Cmd::Diagnose { null_normality: _, n, k, reps, seed, shift, threads, format } => RunConfig {
            n,
            k,
            reps,
            seed,
            shift,
            threads: resolve_threads(threads)?,
            output_format: format.into(),
            ..RunConfig::new(Command::Diagnose)
        },
    };
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                _ if !e.use_stderr() => 0,
                clap::error::ErrorKind::MissingRequiredArgument => 2,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match build(cli).and_then(|cfg| cfg.run()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
