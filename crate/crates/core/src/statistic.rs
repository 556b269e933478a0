//! The self-normalized many-instrument statistic, its p-value, and
//! confidence sets by test inversion.
//!
//! For a null value `β₀` let `Y* = Y − Xβ₀` and `Ȳ = Y*/‖Y*‖`. The statistic is
//!
//! ```text
//! Q = √(N² / (2T)) · (Ȳ'S̄Ȳ − tr(S̄)/N),   S̄ = ZZ'/N
//! ```
//!
//! where `T` is `tr(Σ²)` (oracle) or its leave-diagonal-out estimate
//! `Σ_{i≠j}(zᵢ'zⱼ)² / (N(N−1))` (feasible). `Ȳ'S̄Ȳ` is evaluated as `‖Z'Ȳ‖²/N`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gram_summary, GramSummary, InstrumentMatrix};
use crate::scalar::Real;

/// `‖Y*‖²` below this is treated as an exact zero residual.
pub const DEGENERATE_RESIDUAL_NORM_SQ: f64 = 1e-300;

/// Outcome, endogenous regressor and instruments for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    y: DVector<T>,
    x: DVector<T>,
    z: InstrumentMatrix<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(y: DVector<T>, x: DVector<T>, z: InstrumentMatrix<T>) -> Result<Self> {
        if y.len() != z.n() || x.len() != z.n() {
            return Err(Error::validation(format!(
                "length mismatch: y has {}, x has {}, Z has {} rows",
                y.len(),
                x.len(),
                z.n()
            )));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("y and x must be finite"));
        }
        Ok(Self { y, x, z })
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn x(&self) -> &DVector<T> {
        &self.x
    }

    pub fn z(&self) -> &InstrumentMatrix<T> {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.z.n()
    }

    pub fn k(&self) -> usize {
        self.z.k()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// Reject for large positive values (one-sided, right tail).
    #[default]
    Greater,
    TwoSided,
}

impl Alternative {
    pub fn as_str(self) -> &'static str {
        match self {
            Alternative::Greater => "greater",
            Alternative::TwoSided => "two-sided",
        }
    }
}

impl std::str::FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greater" => Ok(Alternative::Greater),
            "two-sided" => Ok(Alternative::TwoSided),
            other => Err(Error::validation(format!(
                "unknown alternative `{other}` (expected greater or two-sided)"
            ))),
        }
    }
}

/// Null value, rejection region, and level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis<T: Real> {
    pub beta0: T,
    pub alternative: Alternative,
    pub alpha: f64,
}

impl<T: Real> Hypothesis<T> {
    pub fn new(beta0: T, alternative: Alternative, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::validation(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !beta0.is_finite() {
            return Err(Error::validation("beta0 must be finite"));
        }
        Ok(Self { beta0, alternative, alpha })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `tr(Σ²)` supplied by the caller.
    Oracle,
    /// `tr(Σ²)` estimated from the instruments.
    Feasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome<T: Real> {
    pub statistic: T,
    pub trace_sbar: T,
    pub trace_sigma2: T,
    pub p_value: f64,
    pub reject: bool,
    pub n: usize,
    pub k: usize,
    pub mode: Mode,
}

/// `Ȳ` together with `‖Y*‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedResidual<T: Real> {
    pub unit: DVector<T>,
    pub norm_sq: T,
}

/// Self-normalizes the null residual `y − xβ₀`.
pub fn normalize_residual<T: Real>(
    y: &DVector<T>,
    x: &DVector<T>,
    beta0: T,
) -> Result<NormalizedResidual<T>> {
    if y.len() != x.len() {
        return Err(Error::validation(format!(
            "y has {} entries but x has {}",
            y.len(),
            x.len()
        )));
    }
    let resid = y - x * beta0;
    let norm_sq = resid.norm_squared();
    if !norm_sq.is_finite() {
        return Err(Error::validation("residual is not finite"));
    }
    if norm_sq.as_f64() < DEGENERATE_RESIDUAL_NORM_SQ {
        return Err(Error::DegenerateResidual);
    }
    let unit = resid / norm_sq.sqrt();
    Ok(NormalizedResidual { unit, norm_sq })
}

/// Leave-diagonal-out estimate from precomputed Gram functionals.
///
/// `(‖Z'Z‖²_F − Σᵢ‖zᵢ‖⁴) / (N(N−1))`. A numerator within rounding of zero
/// means every cross-product vanished and is reported as degenerate.
pub fn trace_sigma2_from_gram<T: Real>(gram: &GramSummary<T>) -> Result<T> {
    let n = gram.row_norms_sq.len();
    if n < 2 {
        return Err(Error::validation("trace estimate needs N >= 2"));
    }
    let numerator = gram.frob_sq_cross - gram.sum_row_norms_fourth();
    let floor = T::lit(64.0 * T::epsilon_f64()) * gram.frob_sq_cross;
    let estimate = numerator / T::lit(n as f64 * (n as f64 - 1.0));
    if numerator <= floor {
        return Err(Error::DegenerateInstruments(estimate.as_f64()));
    }
    Ok(estimate)
}

/// Ratio-consistent estimate of `tr(Σ²)` from the instruments alone.
pub fn trace_sigma2_hat<T: Real>(z: &InstrumentMatrix<T>) -> Result<T> {
    trace_sigma2_from_gram(&gram_summary(z))
}

fn std_normal_upper_tail(s: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(s / std::f64::consts::SQRT_2)
}

/// Asymptotic N(0,1) p-value of a statistic.
pub fn p_value(statistic: f64, alternative: Alternative) -> Result<f64> {
    if !statistic.is_finite() {
        return Err(Error::validation(format!("statistic is not finite: {statistic}")));
    }
    let p = match alternative {
        Alternative::Greater => std_normal_upper_tail(statistic),
        Alternative::TwoSided => 2.0 * std_normal_upper_tail(statistic.abs()),
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Instrument-side quantities reused across null values and outcome draws.
#[derive(Debug, Clone)]
pub struct InstrumentContext<'a, T: Real> {
    z: &'a InstrumentMatrix<T>,
    gram: GramSummary<T>,
}

impl<'a, T: Real> InstrumentContext<'a, T> {
    pub fn new(z: &'a InstrumentMatrix<T>) -> Self {
        Self { z, gram: gram_summary(z) }
    }

    pub fn gram(&self) -> &GramSummary<T> {
        &self.gram
    }

    pub fn trace_sigma2_hat(&self) -> Result<T> {
        trace_sigma2_from_gram(&self.gram)
    }

    /// Resolves the trace to use: the supplied oracle value or the estimate.
    pub fn resolve_trace(&self, oracle: Option<T>) -> Result<(T, Mode)> {
        match oracle {
            Some(t) if t > T::zero() && t.is_finite() => Ok((t, Mode::Oracle)),
            Some(t) => Err(Error::validation(format!(
                "oracle tr(Sigma^2) must be positive and finite, got {}",
                t.as_f64()
            ))),
            None => Ok((self.trace_sigma2_hat()?, Mode::Feasible)),
        }
    }

    /// `Ȳ'S̄Ȳ − tr(S̄)/N`, the centered quadratic form.
    pub fn centered_form(&self, ybar: &DVector<T>) -> T {
        let n = T::lit(self.z.n() as f64);
        self.z.cross(ybar).norm_squared() / n - self.gram.trace_sbar / n
    }

    /// The scaled statistic for a given trace value.
    pub fn statistic(&self, y: &DVector<T>, x: &DVector<T>, beta0: T, trace_sigma2: T) -> Result<T> {
        let resid = normalize_residual(y, x, beta0)?;
        Ok(scale_factor(self.z.n(), trace_sigma2) * self.centered_form(&resid.unit))
    }

    /// Full test at `hyp` with either an oracle or the estimated trace.
    pub fn test(
        &self,
        y: &DVector<T>,
        x: &DVector<T>,
        hyp: &Hypothesis<T>,
        trace_sigma2: Option<T>,
    ) -> Result<TestOutcome<T>> {
        let (trace, mode) = self.resolve_trace(trace_sigma2)?;
        let statistic = self.statistic(y, x, hyp.beta0, trace)?;
        let p = p_value(statistic.as_f64(), hyp.alternative)?;
        Ok(TestOutcome {
            statistic,
            trace_sbar: self.gram.trace_sbar,
            trace_sigma2: trace,
            p_value: p,
            reject: p < hyp.alpha,
            n: self.z.n(),
            k: self.z.k(),
            mode,
        })
    }
}

/// `√(N² / (2T))`.
pub fn scale_factor<T: Real>(n: usize, trace_sigma2: T) -> T {
    let n = T::lit(n as f64);
    (n * n / (T::lit(2.0) * trace_sigma2)).sqrt()
}

/// Runs the test. `trace_sigma2 = Some(t)` selects the oracle statistic;
/// `None` estimates `tr(Σ²)` from `Z` (feasible statistic).
pub fn q_statistic<T: Real>(
    data: &Dataset<T>,
    hyp: &Hypothesis<T>,
    trace_sigma2: Option<T>,
) -> Result<TestOutcome<T>> {
    InstrumentContext::new(data.z()).test(data.y(), data.x(), hyp, trace_sigma2)
}

/// Uniform grid of candidate null values, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaGrid {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl BetaGrid {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Result<Self> {
        let grid = Self { lo, hi, steps };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::validation("grid bounds must be finite"));
        }
        if self.steps == 1 && self.lo == self.hi {
            return Ok(());
        }
        if self.lo >= self.hi {
            return Err(Error::validation(format!(
                "grid needs lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.steps < 2 {
            return Err(Error::validation("grid needs at least 2 steps"));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.lo];
        }
        let width = self.hi - self.lo;
        let last = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| {
                if i + 1 == self.steps {
                    self.hi
                } else {
                    self.lo + width * (i as f64 / last)
                }
            })
            .collect()
    }
}

/// Closed interval of accepted null values, at grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, beta: f64) -> bool {
        self.lo <= beta && beta <= self.hi
    }
}

/// Confidence set by inverting the feasible test over a grid of `β₀`.
///
/// Consecutive non-rejected grid points are merged into maximal intervals.
/// Grid points are evaluated in parallel; the result does not depend on
/// evaluation order.
pub fn invert_ci<T: Real>(
    data: &Dataset<T>,
    alpha: f64,
    alternative: Alternative,
    grid: &BetaGrid,
) -> Result<Vec<Interval>> {
    grid.validate()?;
    Hypothesis::new(T::zero(), alternative, alpha)?;
    let ctx = InstrumentContext::new(data.z());
    let trace = ctx.trace_sigma2_hat()?;
    let points = grid.points();
    let accepted: Vec<bool> = points
        .par_iter()
        .map(|&b| {
            let stat = ctx.statistic(data.y(), data.x(), T::lit(b), trace)?;
            Ok(p_value(stat.as_f64(), alternative)? >= alpha)
        })
        .collect::<Result<_>>()?;
    Ok(merge_accepted(&points, &accepted))
}

fn merge_accepted(points: &[f64], accepted: &[bool]) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &ok) in accepted.iter().enumerate() {
        match (ok, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Interval { lo: points[s], hi: points[i - 1] });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Interval { lo: points[s], hi: points[points.len() - 1] });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn zero_residual_is_degenerate() {
        let y = dvec(&[1.0, 2.0, 3.0]);
        assert!(matches!(normalize_residual(&y, &y, 1.0), Err(Error::DegenerateResidual)));
    }

    #[test]
    fn residual_normalization_by_hand() {
        let r = normalize_residual(&dvec(&[3.0, 4.0, 0.0]), &dvec(&[0.0; 3]), 7.5).unwrap();
        assert_relative_eq!(r.unit, dvec(&[0.6, 0.8, 0.0]), epsilon = 1e-15);
        assert_relative_eq!(r.norm_sq, 25.0);
        let r = normalize_residual(&dvec(&[1.0, -2.0, 0.3, 8.0]), &dvec(&[0.5, 0.1, 1.0, 2.0]), 1.3).unwrap();
        assert!((r.unit.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_rows_have_no_trace_estimate() {
        let z = InstrumentMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(trace_sigma2_hat(&z), Err(Error::DegenerateInstruments(_))));
    }

    #[test]
    fn trace_estimate_by_hand() {
        let z = InstrumentMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_relative_eq!(trace_sigma2_hat(&z).unwrap(), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn trace_estimate_matches_pair_loop() {
        let data: Vec<f64> = (0..18).map(|i| ((i * 5 + 3) % 13) as f64 / 4.0 - 1.5).collect();
        let z = InstrumentMatrix::from_row_slice(6, 3, &data).unwrap();
        let mut brute = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    let dot: f64 = (0..3).map(|c| data[i * 3 + c] * data[j * 3 + c]).sum();
                    brute += dot * dot;
                }
            }
        }
        brute /= 30.0;
        assert_relative_eq!(trace_sigma2_hat(&z).unwrap(), brute, max_relative = 1e-10);
    }

    #[test]
    fn p_value_reference_points() {
        assert_relative_eq!(p_value(0.0, Alternative::TwoSided).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(p_value(0.0, Alternative::Greater).unwrap(), 0.5, epsilon = 1e-15);
        assert!((p_value(1.6448536, Alternative::Greater).unwrap() - 0.05).abs() < 1e-6);
        assert!((p_value(1.9599640, Alternative::TwoSided).unwrap() - 0.05).abs() < 1e-6);
        assert!((p_value(-1.9599640, Alternative::TwoSided).unwrap() - 0.05).abs() < 1e-6);
        assert!((p_value(-1.6448536, Alternative::Greater).unwrap() - 0.95).abs() < 1e-6);
        // far tail stays positive (about 4.9e-198)
        assert!(p_value(30.0, Alternative::Greater).unwrap() > 0.0);
        assert!(p_value(f64::NAN, Alternative::Greater).is_err());
        assert!(p_value(f64::INFINITY, Alternative::Greater).is_err());
    }

    #[test]
    fn identity_gram_gives_zero_statistic() {
        let n = 5;
        let z = InstrumentMatrix::new(DMatrix::<f64>::identity(n, n) * (n as f64).sqrt()).unwrap();
        let data = Dataset::new(
            dvec(&[1.0, 0.2, -0.4, 2.0, 0.3]),
            dvec(&[0.1, 0.5, 0.5, -1.0, 0.0]),
            z,
        )
        .unwrap();
        let hyp = Hypothesis::new(0.7, Alternative::Greater, 0.05).unwrap();
        let out = q_statistic(&data, &hyp, Some(3.0)).unwrap();
        assert!(out.statistic.abs() < 1e-12, "{}", out.statistic);
        assert_eq!(out.mode, Mode::Oracle);
    }

    #[test]
    fn hypothesis_validates_alpha() {
        assert!(Hypothesis::new(0.0, Alternative::Greater, 0.0).is_err());
        assert!(Hypothesis::new(0.0, Alternative::Greater, 1.0).is_err());
        assert!(Hypothesis::new(f64::NAN, Alternative::Greater, 0.05).is_err());
    }

    #[test]
    fn oracle_trace_must_be_positive() {
        let z = InstrumentMatrix::from_row_slice(2, 1, &[1.0, 2.0]).unwrap();
        let data = Dataset::new(dvec(&[1.0, 0.0]), dvec(&[0.0, 1.0]), z).unwrap();
        let hyp = Hypothesis::new(0.0, Alternative::Greater, 0.05).unwrap();
        assert!(matches!(q_statistic(&data, &hyp, Some(0.0)), Err(Error::Validation(_))));
        assert!(matches!(q_statistic(&data, &hyp, Some(-1.0)), Err(Error::Validation(_))));
    }

    #[test]
    fn dataset_length_mismatch() {
        let z = InstrumentMatrix::from_row_slice(2, 1, &[1.0, 2.0]).unwrap();
        assert!(Dataset::new(dvec(&[1.0]), dvec(&[0.0, 1.0]), z).is_err());
    }

    #[test]
    fn grid_points_and_validation() {
        let g = BetaGrid::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(g.points(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(BetaGrid::new(1.0, 1.0, 5).is_err());
        assert!(BetaGrid::new(0.0, 1.0, 1).is_err());
        assert_eq!(BetaGrid::new(2.0, 2.0, 1).unwrap().points(), vec![2.0]);
    }

    #[test]
    fn merging_runs() {
        let pts = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let acc = [true, true, false, true, false, true];
        assert_eq!(
            merge_accepted(&pts, &acc),
            vec![
                Interval { lo: 0.0, hi: 1.0 },
                Interval { lo: 3.0, hi: 3.0 },
                Interval { lo: 5.0, hi: 5.0 }
            ]
        );
        assert!(merge_accepted(&pts, &[false; 6]).is_empty());
    }
}
