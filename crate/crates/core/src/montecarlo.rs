//! Replication engine for simulation grids, the noncentrality diagnostic and
//! the null-normality check.
//!
//! Cells sharing `(N, K, instrument design)` are run together: each
//! replication draws `Z` once (from a stream that depends only on those
//! parameters) and reuses its Gram summary for every such cell, so cells
//! differ only through their outcome draws. Counts are accumulated as
//! integers, which makes every aggregate independent of scheduling.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{draw_outcome, ErrorProcess, InstrumentGenerator, SimCell, Truth};
use crate::error::{Error, Result};
use crate::linalg::{gram_summary, InstrumentMatrix};
use crate::rng::StreamKey;
use crate::statistic::{Alternative, Hypothesis, InstrumentContext};

/// A cell fails when more than this fraction of replications is degenerate.
pub const MAX_DEGENERATE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub cell: SimCell,
    /// Valid (non-degenerate) replications.
    pub reps: u64,
    pub rejections: u64,
    /// Replications excluded because the statistic was undefined.
    pub degenerate: u64,
    pub rate: f64,
    pub mc_std_err: f64,
}

impl RejectionRate {
    fn from_counts(cell: SimCell, reps: u64, rejections: u64, degenerate: u64) -> Self {
        let rate = if reps == 0 { f64::NAN } else { rejections as f64 / reps as f64 };
        Self {
            cell,
            reps,
            rejections,
            degenerate,
            rate,
            mc_std_err: (rate * (1.0 - rate) / reps as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub base_seed: u64,
    pub reps: u64,
    pub alpha: f64,
    pub alternative: Alternative,
    pub beta0: f64,
    pub software_version: String,
    pub degenerate_policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionTable {
    pub metadata: TableMetadata,
    pub entries: Vec<RejectionRate>,
}

impl RejectionTable {
    /// Entry matching `(process label, ρ, K/N, h)`.
    pub fn find(&self, label: &str, rho: f64, ratio: f64, h: f64) -> Option<&RejectionRate> {
        self.entries.iter().find(|e| {
            e.cell.process.label() == label && e.cell.rho == rho && e.cell.ratio == ratio && e.cell.h == h
        })
    }
}

/// Default grid: N = 400, three processes × ρ ∈ {.5, .9, −.9} × K/N ∈
/// {1/4, 1/2, 1, 2, 3} × h ∈ {0, 1, 2, 5}, ordered by h, K/N, process, ρ.
pub fn table1_grid() -> Vec<SimCell> {
    grid(
        400,
        &[0.25, 0.5, 1.0, 2.0, 3.0],
        &[0.5, 0.9, -0.9],
        &[0.0, 1.0, 2.0, 5.0],
        &[ErrorProcess::network(), ErrorProcess::spatial(), ErrorProcess::multiplicative()],
    )
}

/// Cartesian product ordered by h, K/N, process, ρ.
pub fn grid(n: usize, ratios: &[f64], rhos: &[f64], hs: &[f64], processes: &[ErrorProcess]) -> Vec<SimCell> {
    let mut cells = Vec::with_capacity(ratios.len() * rhos.len() * hs.len() * processes.len());
    for &h in hs {
        for &ratio in ratios {
            for process in processes {
                for &rho in rhos {
                    cells.push(SimCell::new(n, ratio, rho, h, *process));
                }
            }
        }
    }
    cells
}

pub fn run_cell(cell: &SimCell, reps: u64, base_seed: u64, hyp: &Hypothesis<f64>) -> Result<RejectionRate> {
    let table = run_grid(std::slice::from_ref(cell), reps, base_seed, hyp)?;
    Ok(table.entries.into_iter().next().expect("one entry per cell"))
}

/// Runs on the global rayon pool.
pub fn run_grid(cells: &[SimCell], reps: u64, base_seed: u64, hyp: &Hypothesis<f64>) -> Result<RejectionTable> {
    run_grid_with(cells, reps, base_seed, hyp, None)
}

/// As [`run_grid`], on a dedicated pool of `threads` workers when given.
pub fn run_grid_with(
    cells: &[SimCell],
    reps: u64,
    base_seed: u64,
    hyp: &Hypothesis<f64>,
    threads: Option<usize>,
) -> Result<RejectionTable> {
    if cells.is_empty() {
        return Err(Error::validation("simulation grid is empty"));
    }
    if reps == 0 {
        return Err(Error::validation("reps must be at least 1"));
    }
    match threads {
        Some(0) => Err(Error::validation("threads must be at least 1")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Numeric(format!("cannot start thread pool: {e}")))?
            .install(|| run_grid_inner(cells, reps, base_seed, hyp)),
        None => run_grid_inner(cells, reps, base_seed, hyp),
    }
}

struct Group {
    key: StreamKey,
    generator: InstrumentGenerator,
    n: usize,
    members: Vec<usize>,
}

#[derive(Clone, Copy, Default)]
struct Counts {
    rejections: u64,
    degenerate: u64,
}

fn run_grid_inner(cells: &[SimCell], reps: u64, base_seed: u64, hyp: &Hypothesis<f64>) -> Result<RejectionTable> {
    let mut groups: BTreeMap<[u8; 32], Group> = BTreeMap::new();
    let mut deltas = Vec::with_capacity(cells.len());
    for (idx, cell) in cells.iter().enumerate() {
        let k = cell.validate()?;
        deltas.push(cell.delta()?);
        let key = cell.instrument_key()?;
        if let Some(group) = groups.get_mut(key.as_bytes()) {
            group.members.push(idx);
        } else {
            let generator = InstrumentGenerator::new(&cell.design, k)?;
            groups.insert(*key.as_bytes(), Group { key, generator, n: cell.n, members: vec![idx] });
        }
    }
    let outcome_keys: Vec<StreamKey> = cells.iter().map(SimCell::outcome_key).collect();

    let mut counts = vec![Counts::default(); cells.len()];
    for group in groups.values() {
        let per_member = (0..reps)
            .into_par_iter()
            .map(|rep| replicate(group, cells, &deltas, &outcome_keys, hyp, base_seed, rep))
            .try_reduce(
                || vec![Counts::default(); group.members.len()],
                |mut acc, next| {
                    for (a, b) in acc.iter_mut().zip(next) {
                        a.rejections += b.rejections;
                        a.degenerate += b.degenerate;
                    }
                    Ok(acc)
                },
            )?;
        for (&idx, c) in group.members.iter().zip(per_member) {
            counts[idx] = c;
        }
    }

    let limit = (MAX_DEGENERATE_FRACTION * reps as f64).floor() as u64;
    let failed: Vec<String> = cells
        .iter()
        .zip(&counts)
        .filter(|(_, c)| c.degenerate > limit)
        .map(|(cell, c)| format!("{} ({} of {reps} replications degenerate)", cell.label(), c.degenerate))
        .collect();
    if !failed.is_empty() {
        return Err(Error::CellFailure { failed });
    }

    let entries = cells
        .iter()
        .zip(counts)
        .map(|(cell, c)| RejectionRate::from_counts(cell.clone(), reps - c.degenerate, c.rejections, c.degenerate))
        .collect();
    Ok(RejectionTable {
        metadata: TableMetadata {
            base_seed,
            reps,
            alpha: hyp.alpha,
            alternative: hyp.alternative,
            beta0: hyp.beta0,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            degenerate_policy: format!(
                "degenerate replications excluded from rate; cell fails above {}%",
                MAX_DEGENERATE_FRACTION * 100.0
            ),
        },
        entries,
    })
}

fn replicate(
    group: &Group,
    cells: &[SimCell],
    deltas: &[f64],
    outcome_keys: &[StreamKey],
    hyp: &Hypothesis<f64>,
    base_seed: u64,
    rep: u64,
) -> Result<Vec<Counts>> {
    let mut inst_rng = group.key.stream(base_seed, rep);
    let z = group.generator.generate(group.n, &mut inst_rng)?;
    let ctx = InstrumentContext::new(&z);
    let trace = match ctx.trace_sigma2_hat() {
        Ok(t) => t,
        Err(e) if e.is_degenerate() => {
            return Ok(vec![Counts { rejections: 0, degenerate: 1 }; group.members.len()]);
        }
        Err(e) => return Err(e),
    };
    group
        .members
        .iter()
        .map(|&idx| {
            let mut rng = outcome_keys[idx].stream(base_seed, rep);
            let outcome = draw_outcome(&cells[idx], &z, deltas[idx], &mut rng)
                .and_then(|o| ctx.test(&o.y, &o.x, hyp, Some(trace)));
            match outcome {
                Ok(t) => Ok(Counts { rejections: t.reject as u64, degenerate: 0 }),
                Err(e) if e.is_degenerate() => Ok(Counts { rejections: 0, degenerate: 1 }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Drift of the statistic under the local alternative, with its three summands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noncentrality {
    pub value: f64,
    /// Signal, first-stage noise and cross terms, in that order.
    pub terms: [f64; 3],
}

/// Evaluates the noncentrality for one simulated dataset.
///
/// With `S = Z'Z/N`, `S̄ = ZZ'/N`, `t = tr(S)`, `T = tr(Σ²)`:
///
/// - term 1: `N/(‖ε‖²(2T)^{1/10}) · h² · π'(S² − (t/N)I)π`
/// - term 2: `N/(‖ε‖²(2T)^{1/10}) · h² · v'(S̄/N − (t/N²)I)v`
/// - term 3: `2√N/(‖ε‖²(2T)^{3/10}) · h · v'(S̄ − (t/N)I)ε`
pub fn noncentrality(
    pi: &DVector<f64>,
    v: &DVector<f64>,
    eps: &DVector<f64>,
    z: &InstrumentMatrix<f64>,
    h: f64,
    trace_sigma2: f64,
) -> Result<Noncentrality> {
    let (n, k) = (z.n(), z.k());
    if pi.len() != k || v.len() != n || eps.len() != n {
        return Err(Error::validation(format!(
            "dimension mismatch: Z is {n}x{k}, pi has {}, v has {}, eps has {}",
            pi.len(),
            v.len(),
            eps.len()
        )));
    }
    if !(trace_sigma2 > 0.0 && trace_sigma2.is_finite()) {
        return Err(Error::validation("trace_sigma2 must be positive and finite"));
    }
    let eps_sq = eps.norm_squared();
    if eps_sq == 0.0 {
        return Err(Error::validation("structural errors are identically zero"));
    }
    let nf = n as f64;
    let t = gram_summary(z).trace_sbar;
    let two_t = 2.0 * trace_sigma2;

    let s_pi = z.cross(&z.apply(pi)) / nf;
    let zv = z.cross(v);
    let ze = z.cross(eps);

    let scale = nf / (eps_sq * two_t.powf(0.1));
    let term1 = scale * h * h * (s_pi.norm_squared() - t / nf * pi.norm_squared());
    let term2 = scale * h * h * (zv.norm_squared() / (nf * nf) - t / (nf * nf) * v.norm_squared());
    let cross_scale = 2.0 * nf.sqrt() / (eps_sq * two_t.powf(0.3));
    let term3 = cross_scale * h * (zv.dot(&ze) / nf - t / nf * v.dot(eps));
    Ok(Noncentrality { value: term1 + term2 + term3, terms: [term1, term2, term3] })
}

/// [`noncentrality`] from a simulation truth record.
pub fn noncentrality_of(truth: &Truth, z: &InstrumentMatrix<f64>, h: f64, trace_sigma2: f64) -> Result<Noncentrality> {
    noncentrality(&truth.pi, &truth.v, &truth.eps, z, h, trace_sigma2)
}

/// Settings for [`null_normality_diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullDesign {
    pub n: usize,
    pub k: usize,
    pub reps: usize,
    /// Added to every statistic; nonzero only for negative controls.
    #[serde(default)]
    pub shift: f64,
}

impl NullDesign {
    pub fn new(n: usize, k: usize, reps: usize) -> Self {
        Self { n, k, reps, shift: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityCheck {
    pub n: usize,
    pub k: usize,
    pub reps: usize,
    /// Replications with an undefined statistic (not included in the test).
    pub degenerate: usize,
    pub ks_statistic: f64,
    pub p_value: f64,
}

/// Simulates feasible statistics with `Z`, `x` and `ε` iid N(0,1) and
/// `β = β₀`, then tests them against N(0,1) with Kolmogorov–Smirnov.
pub fn null_normality_diagnostic(design: &NullDesign, seed: u64) -> Result<NormalityCheck> {
    if design.reps < 100 {
        return Err(Error::validation(format!("reps must be at least 100, got {}", design.reps)));
    }
    if design.n < 2 || design.k < 1 {
        return Err(Error::validation(format!("need n >= 2 and k >= 1, got n = {}, k = {}", design.n, design.k)));
    }
    if !design.shift.is_finite() {
        return Err(Error::validation("shift must be finite"));
    }
    let key = StreamKey::of("hdiv/null-normality", &(design.n, design.k));
    let hyp = Hypothesis::new(0.0, Alternative::Greater, 0.05)?;
    let draws: Vec<Option<f64>> = (0..design.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = key.stream(seed, rep);
            let (n, k) = (design.n, design.k);
            let mut normal = || rng.sample::<f64, _>(StandardNormal);
            let z = InstrumentMatrix::new(nalgebra::DMatrix::from_fn(n, k, |_, _| normal()))?;
            let x = DVector::from_fn(n, |_, _| normal());
            let eps = DVector::from_fn(n, |_, _| normal());
            match InstrumentContext::new(&z).test(&eps, &x, &hyp, None) {
                Ok(t) => Ok(Some(t.statistic + design.shift)),
                Err(e) if e.is_degenerate() => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut stats: Vec<f64> = draws.iter().flatten().copied().collect();
    let degenerate = draws.len() - stats.len();
    if stats.is_empty() {
        return Err(Error::DegenerateInstruments(0.0));
    }
    let d = ks_statistic_normal(&mut stats);
    Ok(NormalityCheck {
        n: design.n,
        k: design.k,
        reps: design.reps,
        degenerate,
        ks_statistic: d,
        p_value: ks_p_value(d, stats.len()),
    })
}

/// Two-sided KS distance between the sample and N(0,1). Sorts `sample`.
pub fn ks_statistic_normal(sample: &mut [f64]) -> f64 {
    sample.sort_by(f64::total_cmp);
    let m = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let cdf = 0.5 * statrs::function::erf::erfc(-s / std::f64::consts::SQRT_2);
            let lo = cdf - i as f64 / m;
            let hi = (i + 1) as f64 / m - cdf;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of a KS distance `d` from `m` observations, with the
/// small-sample correction `λ = (√m + 0.12 + 0.11/√m)·d`.
pub fn ks_p_value(d: f64, m: usize) -> f64 {
    let root = (m as f64).sqrt();
    let lambda = (root + 0.12 + 0.11 / root) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-300 || term < 1e-16 * sum.abs() {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
