//! Structural error processes: network moving average (NET-E), spatial
//! (SPA-E), and multiplicative heteroskedasticity with a common shock
//! (MUL-E), plus the correlated first-stage errors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::draws::{std_chi2_6, std_t5};
use crate::error::{Error, Result};

/// Undirected graph stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Self { neighbors: vec![Vec::new(); n] }
    }

    /// From an edge list (0-based endpoints; duplicates and self-loops ignored).
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::validation(format!("edge ({a}, {b}) out of range for {n} nodes")));
            }
            if a != b && !g.neighbors[a].contains(&b) {
                g.neighbors[a].push(b);
                g.neighbors[b].push(a);
            }
        }
        for list in &mut g.neighbors {
            list.sort_unstable();
        }
        Ok(g)
    }

    /// One uniform draw per unordered pair `i < j` (row-major order); the
    /// edge is present when `keep(draw)` holds.
    fn from_pair_draws<R: Rng + ?Sized>(n: usize, rng: &mut R, keep: impl Fn(f64) -> bool) -> Self {
        let unit = Uniform::new(0.0, 1.0).expect("valid unit interval");
        let mut g = Self::empty(n);
        for i in 0..n {
            for j in (i + 1)..n {
                if keep(unit.sample(rng)) {
                    g.neighbors[i].push(j);
                    g.neighbors[j].push(i);
                }
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Row-standardized weights: `wᵢⱼ = 1/dᵢ` for neighbours, zero rows for
    /// isolated nodes.
    pub fn row_standardized(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut w = DMatrix::zeros(n, n);
        for (i, list) in self.neighbors.iter().enumerate() {
            let share = 1.0 / list.len() as f64;
            for &j in list {
                w[(i, j)] = share;
            }
        }
        w
    }

    /// `W·v` for the row-standardized weights.
    fn weighted_average(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.neighbors.iter().map(|list| {
                if list.is_empty() {
                    0.0
                } else {
                    list.iter().map(|&j| v[j]).sum::<f64>() / list.len() as f64
                }
            }),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    /// Each pair linked independently with probability `expected_degree / (N−1)`.
    ErdosRenyi { expected_degree: f64 },
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec::ErdosRenyi { expected_degree: 5.0 }
    }
}

impl GraphSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GraphSpec::ErdosRenyi { expected_degree } if expected_degree >= 0.0 && expected_degree.is_finite() => {
                Ok(())
            }
            GraphSpec::ErdosRenyi { expected_degree } => Err(Error::validation(format!(
                "expected_degree must be nonnegative, got {expected_degree}"
            ))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Graph {
        match *self {
            GraphSpec::ErdosRenyi { expected_degree } => {
                let p = if n > 1 { (expected_degree / (n - 1) as f64).min(1.0) } else { 0.0 };
                Graph::from_pair_draws(n, rng, |u| u < p)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkParams {
    pub gamma: f64,
    pub graph: GraphSpec,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self { gamma: 0.5, graph: GraphSpec::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialForm {
    /// `ε = ρ_s W e`.
    Literal,
    /// `(I − ρ_s W) ε = e`.
    #[default]
    Autoregressive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialParams {
    pub rho_s: f64,
    /// Pair `(i, j)` is linked when its uniform draw exceeds this value.
    pub edge_threshold: f64,
    pub form: SpatialForm,
}

impl Default for SpatialParams {
    fn default() -> Self {
        Self { rho_s: 0.8, edge_threshold: 0.5, form: SpatialForm::Autoregressive }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiplicativeParams {
    /// Strength of the skedastic trend `ζᵢ = 1 + a·i/N`.
    pub a: f64,
    /// Loading of the common chi-square shock in `ωᵢ`.
    pub mix_weight: f64,
    /// Location shift added to `ωᵢ` before scaling.
    pub shift: f64,
}

impl Default for MultiplicativeParams {
    fn default() -> Self {
        Self { a: 10.0, mix_weight: 0.7, shift: 2.4 }
    }
}

impl MultiplicativeParams {
    /// `s₂ = shift·(1 + a/2)`, the average of `ζᵢ·shift`.
    pub fn centering(&self) -> f64 {
        self.shift * (1.0 + self.a / 2.0)
    }

    /// `s₁ = [(1 + a/2)² + (1 + shift²)·a²/12]^{−1/2}`, which gives unit
    /// variance averaged over `i` (for `shift = 2.4` the `a²` coefficient is
    /// `169/300`).
    pub fn scale(&self) -> f64 {
        let half = 1.0 + self.a / 2.0;
        (half * half + (1.0 + self.shift * self.shift) * self.a * self.a / 12.0)
            .sqrt()
            .recip()
    }
}

/// Which structural error process generates `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ErrorProcess {
    Network(NetworkParams),
    Spatial(SpatialParams),
    Multiplicative(MultiplicativeParams),
}

impl ErrorProcess {
    pub fn network() -> Self {
        ErrorProcess::Network(NetworkParams::default())
    }

    pub fn spatial() -> Self {
        ErrorProcess::Spatial(SpatialParams::default())
    }

    pub fn multiplicative() -> Self {
        ErrorProcess::Multiplicative(MultiplicativeParams::default())
    }

    /// Short label used in tables.
    pub fn label(&self) -> &'static str {
        match self {
            ErrorProcess::Network(_) => "NET-E",
            ErrorProcess::Spatial(_) => "SPA-E",
            ErrorProcess::Multiplicative(_) => "MUL-E",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ErrorProcess::Network(p) => {
                if !p.gamma.is_finite() {
                    return Err(Error::validation("network gamma must be finite"));
                }
                p.graph.validate()
            }
            ErrorProcess::Spatial(p) => {
                if !(p.edge_threshold > 0.0 && p.edge_threshold < 1.0) {
                    return Err(Error::validation(format!(
                        "edge_threshold must lie in (0, 1), got {}",
                        p.edge_threshold
                    )));
                }
                if !p.rho_s.is_finite() {
                    return Err(Error::validation("rho_s must be finite"));
                }
                if p.form == SpatialForm::Autoregressive && p.rho_s.abs() >= 1.0 {
                    return Err(Error::validation(format!(
                        "autoregressive spatial errors need |rho_s| < 1, got {}",
                        p.rho_s
                    )));
                }
                Ok(())
            }
            ErrorProcess::Multiplicative(p) => {
                if !(p.a >= 0.0 && p.a.is_finite()) {
                    return Err(Error::validation(format!("multiplicative a must be >= 0, got {}", p.a)));
                }
                if !(p.mix_weight.abs() <= 1.0) || !p.shift.is_finite() {
                    return Err(Error::validation("mix_weight must lie in [-1, 1] and shift be finite"));
                }
                Ok(())
            }
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DVector<f64>> {
        self.validate()?;
        match self {
            ErrorProcess::Network(p) => gen_network_errors(p, n, rng),
            ErrorProcess::Spatial(p) => gen_spatial_errors(p, n, rng),
            ErrorProcess::Multiplicative(p) => gen_multiplicative_errors(p, n, rng),
        }
    }
}

/// `εᵢ = (ηᵢ + γ·Σ_{j∈N(i)} ηⱼ) / √(1 + γ²dᵢ)`, unit variance for every node.
pub fn network_errors_from(graph: &Graph, eta: &DVector<f64>, gamma: f64) -> DVector<f64> {
    DVector::from_iterator(
        graph.len(),
        (0..graph.len()).map(|i| {
            let spill: f64 = graph.neighbors(i).iter().map(|&j| eta[j]).sum();
            let d = graph.degree(i) as f64;
            (eta[i] + gamma * spill) / (1.0 + gamma * gamma * d).sqrt()
        }),
    )
}

pub fn gen_network_errors<R: Rng + ?Sized>(
    params: &NetworkParams,
    n: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if n < 2 {
        return Err(Error::validation("network errors need N >= 2"));
    }
    let graph = params.graph.sample(n, rng);
    let eta = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(network_errors_from(&graph, &eta, params.gamma))
}

/// Spatial errors for a given graph and innovation vector.
pub fn spatial_errors_from(
    graph: &Graph,
    innovations: &DVector<f64>,
    rho_s: f64,
    form: SpatialForm,
) -> Result<DVector<f64>> {
    match form {
        SpatialForm::Literal => Ok(graph.weighted_average(innovations) * rho_s),
        SpatialForm::Autoregressive => solve_spatial_ar(graph, innovations, rho_s),
    }
}

/// Solves `(I − ρW)ε = e` for row-standardized `W = D⁻¹A`.
///
/// With `u = D^{1/2}ε` the system becomes `(I − ρD^{-1/2}AD^{-1/2})u = D^{1/2}e`,
/// symmetric positive definite for `|ρ| < 1`; solved by conjugate gradients.
fn solve_spatial_ar(graph: &Graph, e: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    const TOL: f64 = 1e-13;
    const MAX_ITER: usize = 1000;
    let n = graph.len();
    let s = DVector::from_iterator(n, (0..n).map(|i| (graph.degree(i).max(1) as f64).sqrt()));
    let apply = |u: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let acc: f64 = graph.neighbors(i).iter().map(|&j| u[j] / s[j]).sum();
                u[i] - rho * acc / s[i]
            }),
        )
    };
    let b = e.component_mul(&s);
    let b_norm = b.norm();
    let mut u = DVector::zeros(n);
    if b_norm == 0.0 {
        return Ok(u);
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    let mut converged = false;
    for _ in 0..MAX_ITER {
        if rs.sqrt() <= TOL * b_norm {
            converged = true;
            break;
        }
        let ap = apply(&p);
        let curvature = p.dot(&ap);
        if !(curvature > 0.0) {
            return Err(Error::Numeric(
                "spatial system I - rho_s W is singular or indefinite".into(),
            ));
        }
        let step = rs / curvature;
        u.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rs_next = r.norm_squared();
        p = &r + &p * (rs_next / rs);
        rs = rs_next;
    }
    if !converged && rs.sqrt() > TOL * b_norm {
        return Err(Error::Numeric(format!(
            "spatial solve did not converge (residual {:e})",
            rs.sqrt() / b_norm
        )));
    }
    Ok(u.component_div(&s))
}

pub fn gen_spatial_errors<R: Rng + ?Sized>(
    params: &SpatialParams,
    n: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if n < 2 {
        return Err(Error::validation("spatial errors need N >= 2"));
    }
    let threshold = params.edge_threshold;
    let graph = Graph::from_pair_draws(n, rng, |a| a > threshold);
    let e = DVector::from_fn(n, |_, _| std_t5(rng));
    spatial_errors_from(&graph, &e, params.rho_s, params.form)
}

/// `εᵢ = s₁[ζᵢ(ωᵢ + shift) − s₂]` with `ωᵢ = √(1−w²)η₁ᵢ + wη₂`; `η₂` is one
/// draw shared by every `i`, which makes the errors equi-correlated.
pub fn multiplicative_errors_from(
    params: &MultiplicativeParams,
    eta1: &DVector<f64>,
    eta2: f64,
) -> DVector<f64> {
    let n = eta1.len();
    let w = params.mix_weight;
    let idio = (1.0 - w * w).max(0.0).sqrt();
    let (s1, s2) = (params.scale(), params.centering());
    DVector::from_iterator(
        n,
        eta1.iter().enumerate().map(|(idx, &e1)| {
            let zeta = 1.0 + params.a * (idx + 1) as f64 / n as f64;
            let omega = idio * e1 + w * eta2;
            s1 * (zeta * (omega + params.shift) - s2)
        }),
    )
}

pub fn gen_multiplicative_errors<R: Rng + ?Sized>(
    params: &MultiplicativeParams,
    n: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if n < 1 {
        return Err(Error::validation("multiplicative errors need N >= 1"));
    }
    let eta1 = DVector::from_fn(n, |_, _| std_t5(rng));
    let eta2 = std_chi2_6(rng);
    Ok(multiplicative_errors_from(params, &eta1, eta2))
}

/// `vᵢ = ρεᵢ + √(1−ρ²)η₃ᵢ` with `η₃` standardized t(5).
pub fn gen_first_stage_errors<R: Rng + ?Sized>(
    eps: &DVector<f64>,
    rho: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::validation(format!("rho must lie in [-1, 1], got {rho}")));
    }
    let idio = (1.0 - rho * rho).sqrt();
    Ok(DVector::from_iterator(
        eps.len(),
        eps.iter().map(|&e| rho * e + idio * std_t5(rng)),
    ))
}
