//! Command implementations behind the `hdiv` executable. Each returns the
//! rendered output; errors carry the exit status via [`Error::exit_code`].

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::io::{
    read_dataset, render_intervals, render_normality, render_table, render_test, OutputFormat, SimConfig,
};
use crate::montecarlo::{null_normality_diagnostic, run_grid_with, NullDesign};
use crate::statistic::{invert_ci, q_statistic, Alternative, BetaGrid, Hypothesis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Test,
    Simulate,
    Invert,
    Diagnose,
}

/// Everything a command needs; fields irrelevant to a command are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub data_path: Option<PathBuf>,
    pub config_path: Option<PathBuf>,
    /// Use the built-in default grid instead of a config file.
    pub table1_defaults: bool,
    pub beta0: f64,
    pub alpha: f64,
    pub alternative: Alternative,
    pub seed: u64,
    pub reps: u64,
    pub threads: Option<usize>,
    pub output_format: OutputFormat,
    pub grid: Option<BetaGrid>,
    pub n: usize,
    pub k: usize,
    /// Location shift added to diagnostic statistics (negative control).
    pub shift: f64,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            data_path: None,
            config_path: None,
            table1_defaults: false,
            beta0: 0.0,
            alpha: 0.05,
            alternative: Alternative::Greater,
            seed: 0,
            reps: 0,
            threads: None,
            output_format: OutputFormat::Json,
            grid: None,
            n: 400,
            k: 100,
            shift: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.command {
            Command::Test | Command::Invert if self.data_path.is_none() => {
                Err(Error::validation("a data file is required (--data)"))
            }
            Command::Invert if self.grid.is_none() => Err(Error::validation("a beta grid is required")),
            Command::Simulate => match (&self.config_path, self.table1_defaults) {
                (None, false) => Err(Error::validation("pass either --config or --table1-defaults")),
                (Some(_), true) => Err(Error::validation("--config and --table1-defaults are exclusive")),
                _ if self.reps == 0 => Err(Error::validation("reps must be at least 1")),
                _ => Ok(()),
            },
            _ if self.threads == Some(0) => Err(Error::validation("threads must be at least 1")),
            _ => Ok(()),
        }
    }

    pub fn run(&self) -> Result<String> {
        match self.command {
            Command::Test => cmd_test(self),
            Command::Simulate => cmd_simulate(self),
            Command::Invert => cmd_invert(self),
            Command::Diagnose => cmd_diagnose(self),
        }
    }
}

fn data_path(cfg: &RunConfig) -> Result<&std::path::Path> {
    cfg.data_path
        .as_deref()
        .ok_or_else(|| Error::validation("a data file is required (--data)"))
}

/// Feasible test of `β = β₀` on a CSV dataset.
pub fn cmd_test(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let hyp = Hypothesis::new(cfg.beta0, cfg.alternative, cfg.alpha)?;
    let data = read_dataset::<f64>(data_path(cfg)?)?;
    let outcome = q_statistic(&data, &hyp, None)?;
    Ok(render_test(&outcome, &hyp, cfg.output_format))
}

/// Rejection-rate table over a grid of simulation cells.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let sim = match &cfg.config_path {
        Some(path) => SimConfig::from_path(path)?,
        None => SimConfig::default(),
    };
    let hyp = sim.hypothesis()?;
    let cells = sim.cells()?;
    let table = run_grid_with(&cells, cfg.reps, cfg.seed, &hyp, cfg.threads)?;
    Ok(render_table(&table, cfg.output_format))
}

/// Confidence set for `β` by test inversion over a uniform grid.
pub fn cmd_invert(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let grid = cfg.grid.ok_or_else(|| Error::validation("a beta grid is required"))?;
    grid.validate()?;
    Hypothesis::new(0.0, cfg.alternative, cfg.alpha)?;
    let data = read_dataset::<f64>(data_path(cfg)?)?;
    let intervals = invert_ci(&data, cfg.alpha, cfg.alternative, &grid)?;
    Ok(render_intervals(&intervals, &grid, cfg.alpha, cfg.alternative, cfg.output_format))
}

/// Kolmogorov–Smirnov check of the null distribution.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let reps = usize::try_from(cfg.reps).map_err(|_| Error::validation("reps is too large"))?;
    let design = NullDesign { n: cfg.n, k: cfg.k, reps, shift: cfg.shift };
    let check = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Numeric(format!("cannot start thread pool: {e}")))?
            .install(|| null_normality_diagnostic(&design, cfg.seed))?,
        None => null_normality_diagnostic(&design, cfg.seed)?,
    };
    Ok(render_normality(&check, cfg.seed, cfg.shift, cfg.output_format))
}
