//! Latent-factor instruments `zᵢ = Λη₄ᵢ + Σ^{1/2}fᵢ` with a Toeplitz `Σ`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::draws::std_t5;
use crate::error::{Error, Result};
use crate::linalg::{sym_sqrt, toeplitz_powers, InstrumentMatrix};

/// Direction of the first-stage coefficient vector `π` (its norm is fixed
/// separately by `pi_norm_sq`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiDirection {
    /// All weight on instrument `⌊K/2⌋` (0-based): outside the factor span
    /// and away from the Toeplitz boundary, so `π'Σ²π ≈ (1+ρ²)/(1−ρ²)`.
    Interior,
    /// `𝟙/√K`. Nearly the leading eigenvector of a positively correlated
    /// Toeplitz `Σ`, i.e. the most favourable direction for the test.
    Equal,
    /// Uniform on the sphere, redrawn every replication.
    Isotropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstrumentDesign {
    /// `Σᵢⱼ = toeplitz_rho^{|i−j|}`.
    pub toeplitz_rho: f64,
    /// Diagonal of `Λ'Λ`; `None` drops the factor term.
    pub factor_norms_sq: Option<[f64; 3]>,
    /// `π'π`.
    pub pi_norm_sq: f64,
    pub pi_direction: PiDirection,
}

impl Default for InstrumentDesign {
    fn default() -> Self {
        Self {
            toeplitz_rho: 0.7,
            factor_norms_sq: Some([6.0, 5.0, 3.0]),
            pi_norm_sq: 1.0,
            pi_direction: PiDirection::Interior,
        }
    }
}

impl InstrumentDesign {
    /// `Σ = I`, no factors: iid standard normal instruments.
    pub fn iid() -> Self {
        Self { toeplitz_rho: 0.0, factor_norms_sq: None, ..Self::default() }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::validation("number of instruments must be positive"));
        }
        if !(0.0..1.0).contains(&self.toeplitz_rho) {
            return Err(Error::validation(format!(
                "toeplitz_rho must lie in [0, 1), got {}",
                self.toeplitz_rho
            )));
        }
        if let Some(norms) = self.factor_norms_sq {
            if norms.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::validation("factor_norms_sq entries must be positive"));
            }
            if k < 3 {
                return Err(Error::validation(format!(
                    "three latent factors need K >= 3, got K = {k}"
                )));
            }
        }
        if !(self.pi_norm_sq > 0.0 && self.pi_norm_sq.is_finite()) {
            return Err(Error::validation("pi_norm_sq must be positive"));
        }
        Ok(())
    }

    /// `Λ` (K×3) with `Λ'Λ = diag(factor_norms_sq)`: scaled coordinate vectors.
    pub fn loading_matrix(&self, k: usize) -> Option<DMatrix<f64>> {
        self.factor_norms_sq.map(|norms| {
            let mut lambda = DMatrix::zeros(k, 3);
            for (m, v) in norms.iter().enumerate() {
                lambda[(m, m)] = v.sqrt();
            }
            lambda
        })
    }

    pub fn toeplitz(&self, k: usize) -> DMatrix<f64> {
        toeplitz_powers(k, self.toeplitz_rho)
    }

    /// `π` for one replication. Only `Isotropic` consumes randomness.
    pub fn pi_vector<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> DVector<f64> {
        let norm = self.pi_norm_sq.sqrt();
        match self.pi_direction {
            PiDirection::Equal => DVector::from_element(k, norm / (k as f64).sqrt()),
            PiDirection::Interior => {
                let mut pi = DVector::zeros(k);
                pi[k / 2] = norm;
                pi
            }
            PiDirection::Isotropic => {
                let draw = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                let len = draw.norm();
                draw * (norm / len)
            }
        }
    }
}

/// `tr(Σ_z²)` for `Σ_z = ΛΛ' + Σ`, in closed form.
///
/// `Λ` has scaled coordinate columns, so
/// `tr(Σ_z²) = tr(Σ²) + 2·Σ_m ‖Λ_m‖²Σ_mm + Σ_m ‖Λ_m‖⁴`.
pub fn pop_trace_sigma2(design: &InstrumentDesign, k: usize) -> Result<f64> {
    design.validate(k)?;
    let r2 = design.toeplitz_rho * design.toeplitz_rho;
    // Σ_{i,j} ρ^{2|i−j|} = K + 2 Σ_{d≥1} (K−d) ρ^{2d}
    let mut toeplitz = k as f64;
    let mut power = 1.0;
    for d in 1..k {
        power *= r2;
        if power == 0.0 {
            break;
        }
        toeplitz += 2.0 * (k - d) as f64 * power;
    }
    let factors = design
        .factor_norms_sq
        .map(|norms| norms.iter().map(|&v| 2.0 * v + v * v).sum::<f64>())
        .unwrap_or(0.0);
    Ok(toeplitz + factors)
}

/// Draws instrument matrices for a fixed design and K; `Σ^{1/2}` is computed once.
#[derive(Debug, Clone)]
pub struct InstrumentGenerator {
    k: usize,
    root: Option<DMatrix<f64>>,
    loadings: Option<DMatrix<f64>>,
}

impl InstrumentGenerator {
    pub fn new(design: &InstrumentDesign, k: usize) -> Result<Self> {
        design.validate(k)?;
        let root = if design.toeplitz_rho == 0.0 {
            None
        } else {
            Some(sym_sqrt(&design.toeplitz(k))?)
        };
        Ok(Self { k, root, loadings: design.loading_matrix(k) })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `Σ^{1/2}` (`None` when `Σ = I`).
    pub fn root(&self) -> Option<&DMatrix<f64>> {
        self.root.as_ref()
    }

    /// One N×K draw: `f` first (row by row), then the factor shocks.
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<InstrumentMatrix<f64>> {
        if n < 2 {
            return Err(Error::validation(format!("need N >= 2 observations, got {n}")));
        }
        let k = self.k;
        let mut f = DMatrix::<f64>::zeros(n, k);
        for i in 0..n {
            for j in 0..k {
                f[(i, j)] = rng.sample(StandardNormal);
            }
        }
        // zᵢ' = fᵢ'Σ^{1/2} (Σ^{1/2} is symmetric)
        let mut z = match &self.root {
            Some(root) => f * root,
            None => f,
        };
        if let Some(lambda) = &self.loadings {
            let mut shocks = DMatrix::<f64>::zeros(n, 3);
            for i in 0..n {
                for m in 0..3 {
                    shocks[(i, m)] = std_t5(rng);
                }
            }
            z += shocks * lambda.transpose();
        }
        InstrumentMatrix::new(z)
    }
}
