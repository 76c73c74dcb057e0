//! Gaussian model-X knockoffs.
//!
//! Given a standardized design `X` with estimated correlation matrix `Σ`
//! and a vector `s`, knockoff rows are drawn as
//!
//! ```text
//! x̃_i | x_i ~ N(μ_i, V),   μ = X − X Σ⁻¹ diag(s),   V = 2 diag(s) − diag(s) Σ⁻¹ diag(s)
//! ```
//!
//! which makes `[X X̃]` second-order exchangeable with joint covariance
//! `[[Σ, Σ − diag(s)], [Σ − diag(s), Σ]]`.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// Shrinkage levels tried in order when the empirical correlation matrix
/// is not comfortably positive definite.
pub const SHRINKAGE_LADDER: [f64; 5] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1];
/// Smallest eigenvalue accepted for the estimated correlation matrix.
pub const MIN_EIGENVALUE: f64 = 1e-6;
/// Default multiplier on the equicorrelated `s`; exactly 1 can leave `V`
/// singular.
pub const DEFAULT_SLACK: f64 = 0.999;

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Empirical correlation `XᵀX/n` of a standardized dataset, shrunk toward
/// the identity by the smallest ladder step that lifts its smallest
/// eigenvalue to [`MIN_EIGENVALUE`]. Returns the matrix and the shrinkage
/// used.
pub fn estimate_covariance(d: &Dataset) -> Result<(DMatrix<f64>, f64)> {
    if !d.is_standardized() {
        return Err(Error::Invalid(
            "covariance estimation needs a standardized dataset".into(),
        ));
    }
    let n = d.n() as f64;
    let mut raw = d.x().transpose() * d.x() / n;
    symmetrize(&mut raw);
    let p = raw.nrows();
    let identity = DMatrix::<f64>::identity(p, p);
    for &gamma in &SHRINKAGE_LADDER {
        let mut shrunk = &raw * (1.0 - gamma) + &identity * gamma;
        for j in 0..p {
            shrunk[(j, j)] = 1.0;
        }
        if min_eigenvalue(&shrunk) >= MIN_EIGENVALUE {
            return Ok((shrunk, gamma));
        }
    }
    // (1-γ)Σ̂ + γI has λ_min ≥ γ for PSD Σ̂, so the last rung always works
    // unless the eigen-solver itself is off.
    Err(Error::NotPositiveDefinite(
        "shrinkage ladder exhausted".into(),
    ))
}

/// Equicorrelated `s_j = slack · min(2 λ_min(Σ), 1)`.
pub fn compute_s_equicorrelated(sigma: &DMatrix<f64>, slack: f64) -> Result<DVector<f64>> {
    if !(slack > 0.0 && slack <= 1.0) {
        return Err(Error::Invalid(format!("slack must lie in (0, 1], got {slack}")));
    }
    let lambda_min = min_eigenvalue(sigma);
    if !(lambda_min > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "λ_min(Σ) = {lambda_min:.3e}"
        )));
    }
    let value = slack * (2.0 * lambda_min).min(1.0);
    Ok(DVector::from_element(sigma.nrows(), value))
}

fn invert_spd(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("Σ has no Cholesky factor".into()))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Conditional covariance `V = 2 diag(s) − diag(s) Σ⁻¹ diag(s)`, exactly
/// symmetric.
fn conditional_covariance(sigma_inv: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let p = s.len();
    DMatrix::from_fn(p, p, |i, j| {
        let diag = if i == j { 2.0 * s[i] } else { 0.0 };
        diag - s[i] * sigma_inv[(i, j)] * s[j]
    })
}

/// Conditional mean `μ = X − X Σ⁻¹ diag(s)` of every row.
fn conditional_mean(x: &DMatrix<f64>, sigma_inv: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut proj = x * sigma_inv;
    for (j, mut col) in proj.column_iter_mut().enumerate() {
        col *= s[j];
    }
    x - proj
}

/// Conditional mean and covariance of the knockoff rows given `X`.
pub fn knockoff_parameters(
    d: &Dataset,
    sigma: &DMatrix<f64>,
    s: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = d.p();
    if sigma.shape() != (p, p) || s.len() != p {
        return Err(Error::Dimension(format!(
            "dataset has p = {p}, Σ is {:?}, s has length {}",
            sigma.shape(),
            s.len()
        )));
    }
    let sigma_inv = invert_spd(sigma)?;
    let v = conditional_covariance(&sigma_inv, s);
    let lambda = min_eigenvalue(&v);
    if !(lambda > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "λ_min(V) = {lambda:.3e}; s is too large for this Σ"
        )));
    }
    Ok((conditional_mean(d.x(), &sigma_inv, s), v))
}

/// Fitted knockoff sampler for one design.
#[derive(Debug, Clone)]
pub struct KnockoffModel {
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
    v_factor: DMatrix<f64>,
    lambda_min_v: f64,
    shrinkage: f64,
    slack: f64,
}

impl KnockoffModel {
    /// Estimate `Σ` from a standardized dataset and build the
    /// equicorrelated sampler.
    pub fn fit(d: &Dataset, slack: f64) -> Result<Self> {
        let (sigma, shrinkage) = estimate_covariance(d)?;
        Self::from_sigma(sigma, slack, shrinkage)
    }

    /// Build the sampler for a known correlation matrix.
    pub fn from_sigma(sigma: DMatrix<f64>, slack: f64, shrinkage: f64) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::Dimension("Σ must be square".into()));
        }
        let s = compute_s_equicorrelated(&sigma, slack)?;
        let sigma_inv = invert_spd(&sigma)?;
        let v = conditional_covariance(&sigma_inv, &s);
        let lambda_min_v = min_eigenvalue(&v);
        if !(lambda_min_v > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "λ_min(V) = {lambda_min_v:.3e}"
            )));
        }
        let v_factor = Cholesky::new(v.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("V has no Cholesky factor".into()))?
            .l();
        Ok(Self {
            sigma,
            sigma_inv,
            s,
            v,
            v_factor,
            lambda_min_v,
            shrinkage,
            slack,
        })
    }

    pub fn p(&self) -> usize {
        self.s.len()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn lambda_min_v(&self) -> f64 {
        self.lambda_min_v
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn slack(&self) -> f64 {
        self.slack
    }

    /// Joint covariance `G` of `[X X̃]` implied by the model.
    pub fn joint_covariance(&self) -> DMatrix<f64> {
        let p = self.p();
        let mut g = DMatrix::zeros(2 * p, 2 * p);
        let mut cross = self.sigma.clone();
        for j in 0..p {
            cross[(j, j)] -= self.s[j];
        }
        g.view_mut((0, 0), (p, p)).copy_from(&self.sigma);
        g.view_mut((p, p), (p, p)).copy_from(&self.sigma);
        g.view_mut((0, p), (p, p)).copy_from(&cross);
        g.view_mut((p, 0), (p, p)).copy_from(&cross);
        g
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            p: self.p(),
            s: self.s.iter().copied().collect(),
            lambda_min_v: self.lambda_min_v,
            lambda_min_sigma: min_eigenvalue(&self.sigma),
            shrinkage: self.shrinkage,
            slack: self.slack,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub p: usize,
    pub s: Vec<f64>,
    pub lambda_min_v: f64,
    pub lambda_min_sigma: f64,
    pub shrinkage: f64,
    pub slack: f64,
}

/// One sampled knockoff matrix.
#[derive(Debug, Clone)]
pub struct KnockoffCopy {
    pub x_tilde: DMatrix<f64>,
    pub seed: u64,
    pub parent_hash: String,
}

impl KnockoffCopy {
    pub fn write_csv<W: Write>(&self, writer: W, names: &[String]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(names.iter().map(|n| format!("{n}_knockoff")))?;
        for row in self.x_tilde.row_iter() {
            wtr.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// SHA-256 over the design and response, as lowercase hex.
pub fn dataset_checksum(d: &Dataset) -> String {
    let mut hasher = Sha256::new();
    hasher.update((d.n() as u64).to_le_bytes());
    hasher.update((d.p() as u64).to_le_bytes());
    for v in d.x().iter() {
        hasher.update(v.to_le_bytes());
    }
    for v in d.y().iter() {
        hasher.update(v.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Draw a knockoff copy of `d`.
///
/// Row `i` uses its own ChaCha stream keyed by `(seed, i)`, so the result
/// does not depend on evaluation order.
pub fn sample_knockoffs(d: &Dataset, model: &KnockoffModel, seed: u64) -> Result<KnockoffCopy> {
    if !d.is_standardized() {
        return Err(Error::Invalid("knockoff sampling needs a standardized dataset".into()));
    }
    let (n, p) = (d.n(), d.p());
    if model.p() != p {
        return Err(Error::Dimension(format!(
            "model has p = {}, dataset has p = {p}",
            model.p()
        )));
    }
    let mu = conditional_mean(d.x(), &model.sigma_inv, &model.s);
    let mut z = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        let mut rng = seed::row_rng(seed, i as u64);
        for j in 0..p {
            z[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    // rows of Z Lᵀ are L z_i ~ N(0, V)
    let x_tilde = mu + z * model.v_factor.transpose();
    Ok(KnockoffCopy {
        x_tilde,
        seed,
        parent_hash: dataset_checksum(d),
    })
}

/// `[X X̃]` with the knockoff block centered and scaled to sum of squares
/// `n`, matching the convention of the original columns.
pub fn augmented_design(d: &Dataset, copy: &KnockoffCopy) -> Result<DMatrix<f64>> {
    let (n, p) = (d.n(), d.p());
    if copy.x_tilde.shape() != (n, p) {
        return Err(Error::Dimension("knockoff copy does not match the dataset".into()));
    }
    let mut aug = DMatrix::<f64>::zeros(n, 2 * p);
    aug.view_mut((0, 0), (n, p)).copy_from(d.x());
    aug.view_mut((0, p), (n, p)).copy_from(&copy.x_tilde);
    for j in p..2 * p {
        let mut col = aug.column_mut(j);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let rms = (col.norm_squared() / n as f64).sqrt();
        if rms > 0.0 {
            col /= rms;
        }
    }
    Ok(aug)
}
