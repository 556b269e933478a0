//! Dataset CSV files, simulation configuration files and result rendering.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dgp::{ErrorProcess, InstrumentDesign, SimCell};
use crate::error::{Error, Result};
use crate::linalg::InstrumentMatrix;
use crate::montecarlo::{grid, NormalityCheck, RejectionTable};
use crate::scalar::Real;
use crate::statistic::{Alternative, BetaGrid, Dataset, Hypothesis, Interval, TestOutcome};

/// Version of every JSON document written by this module.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            other => Err(Error::validation(format!(
                "unknown output format `{other}` (expected json, csv or markdown)"
            ))),
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn parse_error(location: String, message: impl Into<String>) -> Error {
    Error::Parse { location, message: message.into() }
}

/// Reads a dataset with header `y,x,z1,...,zK`.
pub fn read_dataset<T: Real>(path: &Path) -> Result<Dataset<T>> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    parse_dataset(file, &path.display().to_string())
}

/// Parses dataset CSV from any reader; `source` prefixes error locations.
pub fn parse_dataset<T: Real, R: std::io::Read>(reader: R, source: &str) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_error(format!("{source}: line 1"), e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.len() < 3 {
        return Err(parse_error(
            format!("{source}: line 1"),
            format!("header needs y, x and at least one instrument column, found {} column(s)", names.len()),
        ));
    }
    for (col, name) in names.iter().enumerate() {
        let expected = match col {
            0 => "y".to_string(),
            1 => "x".to_string(),
            j => format!("z{}", j - 1),
        };
        if *name != expected {
            return Err(parse_error(
                format!("{source}: line 1, column {}", col + 1),
                format!("expected header `{expected}`, found `{name}`"),
            ));
        }
    }
    let width = names.len();
    let k = width - 2;
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(format!("{source}: line {line}"), e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(rows as u64 + 2);
        if record.len() != width {
            return Err(parse_error(
                format!("{source}: line {line}"),
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_error(
                    format!("{source}: line {line}, column {} ({})", col + 1, names[col]),
                    format!("`{field}` is not a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_error(
                    format!("{source}: line {line}, column {} ({})", col + 1, names[col]),
                    format!("`{field}` is not finite"),
                ));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows < 2 {
        return Err(Error::validation(format!("{source}: need at least 2 observations, found {rows}")));
    }
    let at = |i: usize, j: usize| T::lit(values[i * width + j]);
    let y = DVector::from_fn(rows, |i, _| at(i, 0));
    let x = DVector::from_fn(rows, |i, _| at(i, 1));
    let z = DMatrix::from_fn(rows, k, |i, j| at(i, j + 2));
    Dataset::new(y, x, InstrumentMatrix::new(z)?)
}

/// Dataset as CSV text; values round-trip exactly.
pub fn dataset_to_csv<T: Real>(data: &Dataset<T>) -> String {
    let mut out = String::from("y,x");
    for j in 1..=data.k() {
        let _ = write!(out, ",z{j}");
    }
    out.push('\n');
    let z = data.z().as_matrix();
    for i in 0..data.n() {
        let _ = write!(out, "{},{}", data.y()[i].as_f64(), data.x()[i].as_f64());
        for j in 0..data.k() {
            let _ = write!(out, ",{}", z[(i, j)].as_f64());
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset<T: Real>(data: &Dataset<T>, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_csv(data)).map_err(|e| io_error(path, e))
}

/// Instrument design section of a simulation config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub toeplitz_rho: f64,
    pub factor_norms_sq: Option<[f64; 3]>,
    pub pi_norm_sq: f64,
    pub pi_direction: crate::dgp::PiDirection,
}

impl Default for DesignConfig {
    fn default() -> Self {
        let d = InstrumentDesign::default();
        Self {
            toeplitz_rho: d.toeplitz_rho,
            factor_norms_sq: d.factor_norms_sq,
            pi_norm_sq: d.pi_norm_sq,
            pi_direction: d.pi_direction,
        }
    }
}

impl From<DesignConfig> for InstrumentDesign {
    fn from(c: DesignConfig) -> Self {
        InstrumentDesign {
            toeplitz_rho: c.toeplitz_rho,
            factor_norms_sq: c.factor_norms_sq,
            pi_norm_sq: c.pi_norm_sq,
            pi_direction: c.pi_direction,
        }
    }
}

/// A process given by name (defaults) or as a full tagged object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProcessEntry {
    Name(ProcessName),
    Spec(ErrorProcess),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcessName {
    #[serde(rename = "network", alias = "NET-E")]
    Network,
    #[serde(rename = "spatial", alias = "SPA-E")]
    Spatial,
    #[serde(rename = "multiplicative", alias = "MUL-E")]
    Multiplicative,
}

impl From<&ProcessEntry> for ErrorProcess {
    fn from(entry: &ProcessEntry) -> Self {
        match entry {
            ProcessEntry::Name(ProcessName::Network) => ErrorProcess::network(),
            ProcessEntry::Name(ProcessName::Spatial) => ErrorProcess::spatial(),
            ProcessEntry::Name(ProcessName::Multiplicative) => ErrorProcess::multiplicative(),
            ProcessEntry::Spec(p) => *p,
        }
    }
}

/// Simulation grid configuration. Missing keys take the default grid's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub ratios: Vec<f64>,
    pub rhos: Vec<f64>,
    pub hs: Vec<f64>,
    pub processes: Vec<ProcessEntry>,
    pub beta0: f64,
    pub alpha: f64,
    pub alternative: Alternative,
    pub design: DesignConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 400,
            ratios: vec![0.25, 0.5, 1.0, 2.0, 3.0],
            rhos: vec![0.5, 0.9, -0.9],
            hs: vec![0.0, 1.0, 2.0, 5.0],
            processes: vec![
                ProcessEntry::Name(ProcessName::Network),
                ProcessEntry::Name(ProcessName::Spatial),
                ProcessEntry::Name(ProcessName::Multiplicative),
            ],
            beta0: 2.0,
            alpha: 0.05,
            alternative: Alternative::Greater,
            design: DesignConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            Error::Config { key: e.path().to_string(), message: e.inner().to_string() }
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn hypothesis(&self) -> Result<Hypothesis<f64>> {
        Hypothesis::new(self.beta0, self.alternative, self.alpha)
    }

    /// Expands to cells (ordered by h, K/N, process, ρ) and validates each.
    pub fn cells(&self) -> Result<Vec<SimCell>> {
        for (key, list) in [("ratios", &self.ratios), ("rhos", &self.rhos), ("hs", &self.hs)] {
            if list.is_empty() {
                return Err(Error::Config { key: key.into(), message: "must not be empty".into() });
            }
        }
        if self.processes.is_empty() {
            return Err(Error::Config { key: "processes".into(), message: "must not be empty".into() });
        }
        let processes: Vec<ErrorProcess> = self.processes.iter().map(ErrorProcess::from).collect();
        let design: InstrumentDesign = self.design.clone().into();
        let mut cells = grid(self.n, &self.ratios, &self.rhos, &self.hs, &processes);
        for cell in &mut cells {
            cell.beta0 = self.beta0;
            cell.design = design.clone();
            cell.validate()?;
        }
        Ok(cells)
    }
}

fn to_pretty(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values serialize");
    s.push('\n');
    s
}

fn csv_line(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

pub fn render_test<T: Real>(outcome: &TestOutcome<T>, hyp: &Hypothesis<T>, format: OutputFormat) -> String {
    let fields: [(&str, Value); 11] = [
        ("statistic", json!(outcome.statistic.as_f64())),
        ("p_value", json!(outcome.p_value)),
        ("reject", json!(outcome.reject)),
        ("n", json!(outcome.n)),
        ("k", json!(outcome.k)),
        ("trace_sbar", json!(outcome.trace_sbar.as_f64())),
        ("trace_sigma2", json!(outcome.trace_sigma2.as_f64())),
        ("mode", json!(outcome.mode)),
        ("beta0", json!(hyp.beta0.as_f64())),
        ("alpha", json!(hyp.alpha)),
        ("alternative", json!(hyp.alternative)),
    ];
    match format {
        OutputFormat::Json => {
            let mut map = serde_json::Map::new();
            map.insert("schema_version".into(), json!(SCHEMA_VERSION));
            for (k, v) in fields {
                map.insert(k.into(), v);
            }
            to_pretty(&Value::Object(map))
        }
        OutputFormat::Csv => {
            let names: Vec<String> = fields.iter().map(|(k, _)| k.to_string()).collect();
            let values: Vec<String> = fields.iter().map(|(_, v)| plain(v)).collect();
            csv_line(&names) + &csv_line(&values)
        }
        OutputFormat::Markdown => {
            let mut s = String::from("| field | value |\n|---|---|\n");
            for (k, v) in &fields {
                let _ = writeln!(s, "| {k} | {} |", plain(v));
            }
            s
        }
    }
}

fn plain(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn cell_fields(e: &crate::montecarlo::RejectionRate) -> Vec<(&'static str, Value)> {
    vec![
        ("process", json!(e.cell.process.label())),
        ("rho", json!(e.cell.rho)),
        ("ratio", json!(e.cell.ratio)),
        ("h", json!(e.cell.h)),
        ("n", json!(e.cell.n)),
        ("k", json!(e.cell.k().unwrap_or(0))),
        ("reps", json!(e.reps)),
        ("rejections", json!(e.rejections)),
        ("degenerate", json!(e.degenerate)),
        ("rate", json!(e.rate)),
        ("mc_std_err", json!(e.mc_std_err)),
    ]
}

pub fn render_table(table: &RejectionTable, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => {
            let entries: Vec<Value> = table
                .entries
                .iter()
                .map(|e| {
                    let mut map: serde_json::Map<String, Value> =
                        cell_fields(e).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
                    map.insert("process_spec".into(), json!(e.cell.process));
                    Value::Object(map)
                })
                .collect();
            to_pretty(&json!({
                "schema_version": SCHEMA_VERSION,
                "metadata": table.metadata,
                "entries": entries,
            }))
        }
        OutputFormat::Csv => {
            let mut out = String::new();
            if let Some(first) = table.entries.first() {
                out += &csv_line(&cell_fields(first).iter().map(|(k, _)| k.to_string()).collect::<Vec<_>>());
            }
            for e in &table.entries {
                out += &csv_line(&cell_fields(e).iter().map(|(_, v)| plain(v)).collect::<Vec<_>>());
            }
            out
        }
        OutputFormat::Markdown => render_table_markdown(table),
    }
}

fn push_unique(list: &mut Vec<f64>, v: f64) {
    if !list.contains(&v) {
        list.push(v);
    }
}

fn fraction(r: f64) -> String {
    for d in [1.0, 2.0, 3.0, 4.0, 5.0, 8.0, 10.0] {
        let num = r * d;
        if (num - num.round()).abs() < 1e-9 {
            return if d == 1.0 { format!("{}", num.round()) } else { format!("{}/{}", num.round(), d) };
        }
    }
    format!("{r}")
}

/// Rejection rates in percent, row blocks by h and rows by K/N, columns by
/// process and ρ.
pub fn render_table_markdown(table: &RejectionTable) -> String {
    let (mut hs, mut ratios, mut rhos, mut labels) = (Vec::new(), Vec::new(), Vec::new(), Vec::<&str>::new());
    for e in &table.entries {
        push_unique(&mut hs, e.cell.h);
        push_unique(&mut ratios, e.cell.ratio);
        push_unique(&mut rhos, e.cell.rho);
        if !labels.contains(&e.cell.process.label()) {
            labels.push(e.cell.process.label());
        }
    }
    let m = &table.metadata;
    let mut s = format!(
        "Rejection rates (%), {} replications, alpha = {}, {} alternative, seed {}\n\n",
        m.reps,
        m.alpha,
        m.alternative.as_str(),
        m.base_seed
    );
    s += "| (K/N, rho) |";
    for label in &labels {
        for rho in &rhos {
            let _ = write!(s, " {label} {rho} |");
        }
    }
    s += "\n|---|";
    s += &"---:|".repeat(labels.len() * rhos.len());
    s.push('\n');
    for &h in &hs {
        let _ = writeln!(s, "| **h = {h}** |{}", " |".repeat(labels.len() * rhos.len()));
        for &ratio in &ratios {
            let _ = write!(s, "| {} |", fraction(ratio));
            for label in &labels {
                for &rho in &rhos {
                    match table.find(label, rho, ratio, h) {
                        Some(e) => {
                            let _ = write!(s, " {:.1} |", 100.0 * e.rate);
                        }
                        None => s += " |",
                    }
                }
            }
            s.push('\n');
        }
    }
    let degenerate: u64 = table.entries.iter().map(|e| e.degenerate).sum();
    if degenerate > 0 {
        let _ = writeln!(s, "\n{degenerate} degenerate replication(s) excluded.");
    }
    s
}

pub fn render_intervals(
    intervals: &[Interval],
    grid: &BetaGrid,
    alpha: f64,
    alternative: Alternative,
    format: OutputFormat,
) -> String {
    match format {
        OutputFormat::Json => {
            let pairs: Vec<[f64; 2]> = intervals.iter().map(|iv| [iv.lo, iv.hi]).collect();
            to_pretty(&json!({
                "schema_version": SCHEMA_VERSION,
                "alpha": alpha,
                "alternative": alternative,
                "grid": grid,
                "intervals": pairs,
            }))
        }
        OutputFormat::Csv => {
            let mut s = String::from("lo,hi\n");
            for iv in intervals {
                let _ = writeln!(s, "{},{}", iv.lo, iv.hi);
            }
            s
        }
        OutputFormat::Markdown => {
            let mut s = format!(
                "Confidence set at level {} ({} points on [{}, {}], {} alternative)\n\n",
                1.0 - alpha,
                grid.steps,
                grid.lo,
                grid.hi,
                alternative.as_str()
            );
            if intervals.is_empty() {
                s += "empty\n";
            } else {
                s += "| lo | hi |\n|---:|---:|\n";
                for iv in intervals {
                    let _ = writeln!(s, "| {} | {} |", iv.lo, iv.hi);
                }
            }
            s
        }
    }
}

pub fn render_normality(check: &NormalityCheck, seed: u64, shift: f64, format: OutputFormat) -> String {
    let fields: [(&str, Value); 8] = [
        ("n", json!(check.n)),
        ("k", json!(check.k)),
        ("reps", json!(check.reps)),
        ("seed", json!(seed)),
        ("shift", json!(shift)),
        ("degenerate", json!(check.degenerate)),
        ("ks_statistic", json!(check.ks_statistic)),
        ("p_value", json!(check.p_value)),
    ];
    match format {
        OutputFormat::Json => {
            let mut map = serde_json::Map::new();
            map.insert("schema_version".into(), json!(SCHEMA_VERSION));
            map.insert("diagnostic".into(), json!("null-normality"));
            for (k, v) in fields {
                map.insert(k.into(), v);
            }
            to_pretty(&Value::Object(map))
        }
        OutputFormat::Csv => {
            let names: Vec<String> = fields.iter().map(|(k, _)| k.to_string()).collect();
            let values: Vec<String> = fields.iter().map(|(_, v)| plain(v)).collect();
            csv_line(&names) + &csv_line(&values)
        }
        OutputFormat::Markdown => {
            let mut s = String::from("| field | value |\n|---|---|\n");
            for (k, v) in &fields {
                let _ = writeln!(s, "| {k} | {} |", plain(v));
            }
            s
        }
    }
}
