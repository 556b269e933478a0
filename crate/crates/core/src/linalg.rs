//! Dense kernels on the instrument matrix: Gram functionals, the symmetric
//! matrix square root, and the eigen-path oracle for the quadratic form.
//!
//! Everything the test statistic needs from `S̄ = ZZ'/N` is a trace, a
//! Frobenius norm, or a quadratic form, so the production path never
//! decomposes a matrix. [`eigen_summary`] and [`eigen_quadratic`] exist to
//! verify that path.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Symmetry tolerance accepted by [`sym_sqrt`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues above `-PSD_CLAMP_TOL` are clamped to zero by [`sym_sqrt`].
pub const PSD_CLAMP_TOL: f64 = 1e-10;
/// Allowed deviation of `‖ȳ‖` from one in [`eigen_quadratic`].
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// N×K instrument matrix with finite entries and N ≥ 2.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentMatrix<T: Real> {
    values: DMatrix<T>,
}

impl<T: Real> InstrumentMatrix<T> {
    pub fn new(values: DMatrix<T>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::validation(format!(
                "instrument matrix needs at least 2 rows, got {}",
                values.nrows()
            )));
        }
        if values.ncols() < 1 {
            return Err(Error::validation("instrument matrix needs at least 1 column"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::validation(format!(
                "instrument entry ({}, {}) is not finite",
                row + 1,
                col + 1
            )));
        }
        Ok(Self { values })
    }

    /// Builds from row-major data.
    pub fn from_row_slice(n: usize, k: usize, data: &[T]) -> Result<Self> {
        if data.len() != n * k {
            return Err(Error::validation(format!(
                "expected {} instrument values for a {n}x{k} matrix, got {}",
                n * k,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, k, data))
    }

    /// Observations.
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Instruments.
    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    /// Dimension ratio K/N.
    pub fn ratio(&self) -> f64 {
        self.k() as f64 / self.n() as f64
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.values
    }

    /// `Z'v` for an N-vector `v`.
    pub fn cross(&self, v: &DVector<T>) -> DVector<T> {
        self.values.tr_mul(v)
    }

    /// `Zπ` for a K-vector `π`.
    pub fn apply(&self, pi: &DVector<T>) -> DVector<T> {
        &self.values * pi
    }
}

/// Functionals of `S̄ = ZZ'/N` consumed by the statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSummary<T: Real> {
    /// `tr(S̄) = Σᵢ‖zᵢ‖² / N`.
    pub trace_sbar: T,
    /// `‖Z'Z‖²_F`, equal to `‖ZZ'‖²_F`.
    pub frob_sq_cross: T,
    /// `‖zᵢ‖²`, the diagonal of `ZZ'`.
    pub row_norms_sq: DVector<T>,
}

impl<T: Real> GramSummary<T> {
    /// `Σᵢ ‖zᵢ‖⁴`.
    pub fn sum_row_norms_fourth(&self) -> T {
        self.row_norms_sq.iter().fold(T::zero(), |acc, &r| acc + r * r)
    }
}

/// Computes the Gram functionals, forming only the smaller of `Z'Z` and `ZZ'`.
pub fn gram_summary<T: Real>(z: &InstrumentMatrix<T>) -> GramSummary<T> {
    let m = z.as_matrix();
    let n = z.n();
    let row_norms_sq = DVector::from_iterator(
        n,
        (0..n).map(|i| m.row(i).iter().fold(T::zero(), |acc, &v| acc + v * v)),
    );
    let total = row_norms_sq.iter().fold(T::zero(), |acc, &r| acc + r);
    let gram = if z.k() <= n {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    GramSummary {
        trace_sbar: total / T::lit(n as f64),
        frob_sq_cross: gram.norm_squared(),
        row_norms_sq,
    }
}

/// Eigen-structure of `S_N = Z'Z/N` and the left singular vectors of `Z/√N`.
#[derive(Debug, Clone)]
pub struct EigenSummary<T: Real> {
    /// `λ_ℓ`, nonincreasing, length `min(K, N)`.
    pub eigenvalues: DVector<T>,
    /// `q_ℓ` as columns (N × min(K, N)).
    pub left_vectors: DMatrix<T>,
}

/// Slow path: SVD of `Z/√N`. Verification only.
pub fn eigen_summary<T: Real>(z: &InstrumentMatrix<T>) -> Result<EigenSummary<T>> {
    let n = z.n();
    let scaled = z.as_matrix() / T::lit(n as f64).sqrt();
    let svd = scaled.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numeric("SVD did not return left singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues =
        DVector::from_iterator(order.len(), order.iter().map(|&i| svd.singular_values[i].powi(2)));
    let left_vectors = DMatrix::from_fn(n, order.len(), |r, c| u[(r, order[c])]);
    Ok(EigenSummary { eigenvalues, left_vectors })
}

/// `Σ_ℓ λ_ℓ (q_ℓ'ȳ)²` through an explicit decomposition.
///
/// Equals `ȳ'(ZZ'/N)ȳ`; used to cross-check the fast path in the statistic.
pub fn eigen_quadratic<T: Real>(z: &InstrumentMatrix<T>, ybar: &DVector<T>) -> Result<T> {
    if ybar.len() != z.n() {
        return Err(Error::validation(format!(
            "vector length {} does not match N = {}",
            ybar.len(),
            z.n()
        )));
    }
    let norm = ybar.norm();
    if (norm - T::one()).abs() > T::lit(UNIT_NORM_TOL) {
        return Err(Error::validation(format!(
            "expected a unit vector, got norm {}",
            norm.as_f64()
        )));
    }
    let eig = eigen_summary(z)?;
    let proj = eig.left_vectors.tr_mul(ybar);
    Ok(eig
        .eigenvalues
        .iter()
        .zip(proj.iter())
        .fold(T::zero(), |acc, (&lambda, &p)| acc + lambda * p * p))
}

/// Symmetric square root `R` (with `R·R = Σ`) of a positive semidefinite matrix.
///
/// Eigenvalues in `[-1e-10·scale, 0)` are clamped to zero; anything more
/// negative is rejected.
pub fn sym_sqrt<T: Real>(sigma: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !sigma.is_square() {
        return Err(Error::validation(format!(
            "square root needs a square matrix, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("matrix has non-finite entries"));
    }
    let scale = sigma.amax().max(T::one());
    let k = sigma.nrows();
    let mut asym = T::zero();
    for i in 0..k {
        for j in (i + 1)..k {
            asym = asym.max((sigma[(i, j)] - sigma[(j, i)]).abs());
        }
    }
    if asym > T::lit(SYMMETRY_TOL) * scale {
        return Err(Error::Asymmetric(asym.as_f64()));
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let min = eig.eigenvalues.min();
    if min < -T::lit(PSD_CLAMP_TOL) * scale {
        return Err(Error::NotPsd(min.as_f64()));
    }
    let roots = eig.eigenvalues.map(|l| l.max(T::zero()).sqrt());
    let scaled = DMatrix::from_fn(k, k, |r, c| eig.eigenvectors[(r, c)] * roots[c]);
    let root = scaled * eig.eigenvectors.transpose();
    Ok((&root + root.transpose()) * T::lit(0.5))
}

/// Toeplitz matrix with entries `ρ^{|i−j|}`.
pub fn toeplitz_powers<T: Real>(k: usize, rho: T) -> DMatrix<T> {
    let powers: Vec<T> = std::iter::successors(Some(T::one()), |&p| Some(p * rho))
        .take(k.max(1))
        .collect();
    DMatrix::from_fn(k, k, |i, j| powers[i.abs_diff(j)])
}
