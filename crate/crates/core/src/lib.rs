//! Weak-identification-robust test for a linear IV model with many
//! instruments (K comparable to or larger than N).
//!
//! The statistic self-normalizes the null residual `y − xβ₀` and compares its
//! instrument-space quadratic form `‖Z'Ȳ‖²/N` against `tr(ZZ')/N²`, scaled by
//! an estimate of `tr(Σ²)`. It is asymptotically N(0,1) under the null for a
//! wide class of dependent, heteroskedastic errors.
//!
//! ```
//! use hdiv::{Alternative, Dataset64, Hypothesis64, InstrumentMatrix64};
//! use nalgebra::DVector;
//!
//! let z = InstrumentMatrix64::from_row_slice(4, 2, &[1.0, 2.0, 0.0, 1.0, 2.0, 1.0, 1.0, 3.0]).unwrap();
//! let data = Dataset64::new(
//!     DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]),
//!     DVector::from_vec(vec![0.2, 1.0, -1.0, 0.4]),
//!     z,
//! )
//! .unwrap();
//! let hyp = Hypothesis64::new(0.0, Alternative::Greater, 0.05).unwrap();
//! let outcome = hdiv::q_statistic(&data, &hyp, None).unwrap();
//! assert!((0.0..=1.0).contains(&outcome.p_value));
//! ```
//!
//! Core numerics are generic over [`Real`] (`f32` or `f64`); the simulation
//! designs and Monte Carlo engine work in `f64`.

pub mod commands;
pub mod dgp;
pub mod error;
pub mod io;
pub mod linalg;
pub mod montecarlo;
pub mod rng;
pub mod scalar;
pub mod statistic;

pub use error::{Error, Result};
pub use linalg::{eigen_quadratic, eigen_summary, gram_summary, sym_sqrt, EigenSummary, GramSummary, InstrumentMatrix};
pub use scalar::Real;
pub use statistic::{
    invert_ci, normalize_residual, p_value, q_statistic, trace_sigma2_hat, Alternative, BetaGrid, Dataset,
    Hypothesis, Interval, Mode, TestOutcome,
};

pub type InstrumentMatrix64 = InstrumentMatrix<f64>;
pub type InstrumentMatrix32 = InstrumentMatrix<f32>;
pub type GramSummary64 = GramSummary<f64>;
pub type GramSummary32 = GramSummary<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Hypothesis64 = Hypothesis<f64>;
pub type Hypothesis32 = Hypothesis<f32>;
pub type TestOutcome64 = TestOutcome<f64>;
pub type TestOutcome32 = TestOutcome<f32>;
