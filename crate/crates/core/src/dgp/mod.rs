//! Simulation designs: instruments, structural and first-stage errors, and
//! assembly of a dataset under a local alternative.

pub mod errors;
pub mod instruments;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::InstrumentMatrix;
use crate::rng::{RandomStream, StreamKey};
use crate::statistic::Dataset;

pub use errors::{
    gen_first_stage_errors, gen_multiplicative_errors, gen_network_errors, gen_spatial_errors, ErrorProcess,
    Graph, GraphSpec, MultiplicativeParams, NetworkParams, SpatialForm, SpatialParams,
};
pub use instruments::{pop_trace_sigma2, InstrumentDesign, InstrumentGenerator, PiDirection};

/// Unit-variance draws used throughout the designs.
pub mod draws {
    use rand::Rng;
    use rand_distr::{ChiSquared, Distribution, StudentT};

    /// t(5) scaled by √(3/5) to unit variance.
    pub fn std_t5<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        let t = StudentT::new(5.0).expect("valid degrees of freedom");
        t.sample(rng) * (3.0f64 / 5.0).sqrt()
    }

    /// `(χ²(6) − 6)/√12`.
    pub fn std_chi2_6<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        let c = ChiSquared::new(6.0).expect("valid degrees of freedom");
        (c.sample(rng) - 6.0) / 12f64.sqrt()
    }
}

/// `Δ = h·(2·tr)^{1/5}/√N`.
pub fn delta_from_h(h: f64, trace_sigma2: f64, n: usize) -> f64 {
    h * (2.0 * trace_sigma2).powf(0.2) / (n as f64).sqrt()
}

/// Inverse of [`delta_from_h`].
pub fn h_from_delta(delta: f64, trace_sigma2: f64, n: usize) -> f64 {
    delta * (n as f64).sqrt() / (2.0 * trace_sigma2).powf(0.2)
}

/// One cell of a simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCell {
    pub n: usize,
    /// `K/N`.
    pub ratio: f64,
    /// Correlation between structural and first-stage errors.
    pub rho: f64,
    /// Local departure; `β = β₀ + Δ(h)`.
    pub h: f64,
    pub process: ErrorProcess,
    pub beta0: f64,
    pub design: InstrumentDesign,
}

#[derive(Serialize)]
struct InstrumentKey<'a> {
    n: usize,
    k: usize,
    toeplitz_rho: f64,
    factor_norms_sq: &'a Option<[f64; 3]>,
}

impl SimCell {
    pub fn new(n: usize, ratio: f64, rho: f64, h: f64, process: ErrorProcess) -> Self {
        Self { n, ratio, rho, h, process, beta0: 2.0, design: InstrumentDesign::default() }
    }

    /// `K = N·ratio`, required to be a positive integer.
    pub fn k(&self) -> Result<usize> {
        let raw = self.n as f64 * self.ratio;
        let k = raw.round();
        if !(raw.is_finite() && k >= 1.0 && (raw - k).abs() <= 1e-9 * raw.max(1.0)) {
            return Err(Error::validation(format!(
                "n * ratio must be a positive integer, got {} * {} = {raw}",
                self.n, self.ratio
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<usize> {
        if self.n < 2 {
            return Err(Error::validation(format!("n must be at least 2, got {}", self.n)));
        }
        let k = self.k()?;
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::validation(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::validation(format!("h must be finite and >= 0, got {}", self.h)));
        }
        if !self.beta0.is_finite() {
            return Err(Error::validation("beta0 must be finite"));
        }
        self.process.validate()?;
        self.design.validate(k)?;
        Ok(k)
    }

    /// Human-readable identifier, e.g. `NET-E rho=0.5 K/N=0.25 h=1 N=400`.
    pub fn label(&self) -> String {
        format!(
            "{} rho={} K/N={} h={} N={}",
            self.process.label(),
            self.rho,
            self.ratio,
            self.h,
            self.n
        )
    }

    /// Streams for instruments depend only on what shapes `Z`, so cells that
    /// share `(N, K, design)` see the same instrument draws.
    pub fn instrument_key(&self) -> Result<StreamKey> {
        let key = InstrumentKey {
            n: self.n,
            k: self.k()?,
            toeplitz_rho: self.design.toeplitz_rho,
            factor_norms_sq: &self.design.factor_norms_sq,
        };
        Ok(StreamKey::of("hdiv/instruments", &key))
    }

    pub fn outcome_key(&self) -> StreamKey {
        StreamKey::of("hdiv/outcome", self)
    }

    /// Instrument and outcome streams for replication `rep`.
    pub fn streams(&self, base_seed: u64, rep: u64) -> Result<(RandomStream, RandomStream)> {
        Ok((
            self.instrument_key()?.stream(base_seed, rep),
            self.outcome_key().stream(base_seed, rep),
        ))
    }

    pub fn delta(&self) -> Result<f64> {
        let k = self.k()?;
        Ok(delta_from_h(self.h, pop_trace_sigma2(&self.design, k)?, self.n))
    }
}

/// Quantities behind a simulated dataset; never part of [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub eps: DVector<f64>,
    pub v: DVector<f64>,
    pub pi: DVector<f64>,
    pub beta: f64,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct SimDraw {
    pub data: Dataset<f64>,
    pub truth: Truth,
}

/// Outcome half of a replication given the instruments.
pub(crate) struct OutcomeDraw {
    pub y: DVector<f64>,
    pub x: DVector<f64>,
    pub truth: Truth,
}

pub(crate) fn draw_outcome<R: Rng + ?Sized>(
    cell: &SimCell,
    z: &InstrumentMatrix<f64>,
    delta: f64,
    rng: &mut R,
) -> Result<OutcomeDraw> {
    let n = z.n();
    let eps = cell.process.generate(n, rng)?;
    let v = gen_first_stage_errors(&eps, cell.rho, rng)?;
    let pi = cell.design.pi_vector(z.k(), rng);
    let x = z.apply(&pi) + &v;
    let beta = cell.beta0 + delta;
    let y = &x * beta + &eps;
    Ok(OutcomeDraw { y, x, truth: Truth { eps, v, pi, beta, delta } })
}

/// Draws one dataset, instruments first and then outcomes, from a single stream.
pub fn assemble_dataset<R: Rng + ?Sized>(cell: &SimCell, rng: &mut R) -> Result<SimDraw> {
    let k = cell.validate()?;
    let z = InstrumentGenerator::new(&cell.design, k)?.generate(cell.n, rng)?;
    finish(cell, z, rng)
}

/// The dataset used by replication `rep` of a Monte Carlo run.
pub fn assemble_replication(cell: &SimCell, base_seed: u64, rep: u64) -> Result<SimDraw> {
    let k = cell.validate()?;
    let (mut inst, mut out) = cell.streams(base_seed, rep)?;
    let z = InstrumentGenerator::new(&cell.design, k)?.generate(cell.n, &mut inst)?;
    finish(cell, z, &mut out)
}

fn finish<R: Rng + ?Sized>(cell: &SimCell, z: InstrumentMatrix<f64>, rng: &mut R) -> Result<SimDraw> {
    let delta = cell.delta()?;
    let OutcomeDraw { y, x, truth } = draw_outcome(cell, &z, delta, rng)?;
    Ok(SimDraw { data: Dataset::new(y, x, z)?, truth })
}
