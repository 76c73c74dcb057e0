//! l1-penalized logistic regression.
//!
//! Minimizes
//!
//! ```text
//! F(b0, β) = (1/n) Σ_i [log(1 + exp(η_i)) − y_i η_i] + r ‖β‖₁,   η = b0 + Xβ
//! ```
//!
//! with an unpenalized intercept `b0`. Each outer pass minimizes a quadratic
//! model of the loss by cyclic coordinate descent with soft-thresholding,
//! then backtracks until the penalized objective decreases. The model uses
//! the IRLS weights `p(1 − p)`; when backtracking stalls it falls back to
//! the curvature bound `1/4`, whose quadratic majorizes the loss and so
//! always descends. The objective is therefore non-increasing across passes.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::FoldAssignment;
use crate::error::{Error, Result};

/// Logistic curvature bound.
const CURVATURE: f64 = 0.25;
/// Floor on IRLS weights; keeps the weighted Hessian numerically definite.
const MIN_WEIGHT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once an outer pass moves no coefficient by more than this.
    pub tol: f64,
    pub max_passes: usize,
    /// Coordinate-descent sweeps allowed per majorizer.
    pub max_inner: usize,
    /// Coefficient magnitude treated as divergence (no finite minimizer).
    pub divergence: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_passes: 100_000,
            max_inner: 1_000,
            divergence: 1e6,
        }
    }
}

/// One penalized fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LassoFit {
    pub r: f64,
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest KKT residual at the returned point (intercept included).
    pub kkt_violation: f64,
    /// False if any outer pass increased the objective.
    pub monotone: bool,
}

impl LassoFit {
    pub fn support(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn nonzero_count(&self) -> usize {
        self.beta.iter().filter(|&&b| b != 0.0).count()
    }
}

/// Penalized fits along a decreasing grid.
#[derive(Debug, Clone, Serialize)]
pub struct LassoPath {
    pub grid: Vec<f64>,
    pub fits: Vec<LassoFit>,
    /// Largest grid value at which each coefficient is nonzero (0 if never).
    pub entry_level: Vec<f64>,
    /// False when the path stopped at a fit that failed to converge.
    pub complete: bool,
    /// Set when the coefficients jump between adjacent grid points.
    pub oscillation: bool,
}

impl LassoPath {
    /// CSV with one row per grid point: `r, intercept, b1..bm`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let m = self.entry_level.len();
        let mut header = vec!["r".to_string(), "intercept".to_string()];
        header.extend((1..=m).map(|j| format!("b{j}")));
        wtr.write_record(&header)?;
        for fit in &self.fits {
            let mut rec = vec![format!("{:?}", fit.r), format!("{:?}", fit.intercept)];
            rec.extend(fit.beta.iter().map(|b| format!("{b:?}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Mean negative log-likelihood of a logistic model with linear predictor
/// `intercept + x·beta`.
pub fn mean_nll(x: &DMatrix<f64>, y: &DVector<f64>, intercept: f64, beta: &[f64]) -> f64 {
    let eta = linear_predictor(x, intercept, beta);
    eta.iter()
        .zip(y.iter())
        .map(|(&e, &yi)| softplus(e) - yi * e)
        .sum::<f64>()
        / y.len() as f64
}

/// Gradient of [`mean_nll`] with respect to `(intercept, beta)`.
pub fn nll_gradient(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    intercept: f64,
    beta: &[f64],
) -> (f64, DVector<f64>) {
    let n = y.len() as f64;
    let eta = linear_predictor(x, intercept, beta);
    let resid = DVector::from_iterator(y.len(), eta.iter().zip(y.iter()).map(|(&e, &yi)| sigmoid(e) - yi));
    (resid.sum() / n, x.tr_mul(&resid) / n)
}

fn linear_predictor(x: &DMatrix<f64>, intercept: f64, beta: &[f64]) -> DVector<f64> {
    let mut eta = DVector::from_element(x.nrows(), intercept);
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            eta.axpy(b, &x.column(j), 1.0);
        }
    }
    eta
}

fn check_response(y: &DVector<f64>) -> Result<f64> {
    let mean = y.mean();
    if mean == 0.0 {
        return Err(Error::DegenerateResponse(0));
    }
    if mean == 1.0 {
        return Err(Error::DegenerateResponse(1));
    }
    Ok(mean)
}

/// Smallest penalty whose solution is `β = 0`: `max_j |x_jᵀ(y − ȳ)| / n`.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension("x and y disagree on n".into()));
    }
    let ybar = check_response(y)?;
    let centered = y.add_scalar(-ybar);
    let n = y.len() as f64;
    Ok(x.tr_mul(&centered).amax() / n)
}

/// Log-spaced decreasing grid from `r_max` to `min_ratio * r_max`.
pub fn log_grid(r_max: f64, grid_size: usize, min_ratio: f64) -> Result<Vec<f64>> {
    if grid_size < 2 {
        return Err(Error::Invalid(format!("grid size must be at least 2, got {grid_size}")));
    }
    if !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(Error::Invalid(format!("min ratio must lie in (0, 1), got {min_ratio}")));
    }
    let step = min_ratio.ln() / (grid_size - 1) as f64;
    let mut grid: Vec<f64> = (0..grid_size).map(|k| r_max * (step * k as f64).exp()).collect();
    grid[0] = r_max;
    grid[grid_size - 1] = r_max * min_ratio;
    Ok(grid)
}

/// Solver bound to one design.
pub struct LogisticLasso<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    ybar: f64,
    bound: std::sync::OnceLock<DMatrix<f64>>,
    options: SolverOptions,
}

impl<'a> LogisticLasso<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>) -> Result<Self> {
        Self::with_options(x, y, SolverOptions::default())
    }

    pub fn with_options(
        x: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        options: SolverOptions,
    ) -> Result<Self> {
        let (n, m) = x.shape();
        if n != y.len() {
            return Err(Error::Dimension(format!("x has {n} rows but y has {}", y.len())));
        }
        if m == 0 {
            return Err(Error::Invalid("design has no columns".into()));
        }
        let ybar = check_response(y)?;
        Ok(Self {
            x,
            y,
            ybar,
            bound: std::sync::OnceLock::new(),
            options,
        })
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn lambda_max(&self) -> f64 {
        let centered = self.y.add_scalar(-self.ybar);
        self.x.tr_mul(&centered).amax() / self.y.len() as f64
    }

    /// `Ĉᵀ Ĉ / (4n)`, the constant-curvature majorizer.
    fn bound_hessian(&self) -> &DMatrix<f64> {
        self.bound.get_or_init(|| {
            let n = self.y.len();
            self.weighted_hessian(&DVector::from_element(n, CURVATURE))
        })
    }

    fn null_intercept(&self) -> f64 {
        (self.ybar / (1.0 - self.ybar)).ln()
    }

    /// Gradient of the mean NLL and the objective at `eta`.
    fn evaluate(&self, eta: &DVector<f64>, beta: &[f64], r: f64) -> (DVector<f64>, f64) {
        let n = self.y.len() as f64;
        let m = self.ncols();
        let mut resid = DVector::zeros(self.y.len());
        let mut loss = 0.0;
        for i in 0..self.y.len() {
            let e = eta[i];
            loss += softplus(e) - self.y[i] * e;
            resid[i] = sigmoid(e) - self.y[i];
        }
        let mut grad = DVector::zeros(m + 1);
        grad[0] = resid.sum() / n;
        for j in 0..m {
            grad[j + 1] = self.x.column(j).dot(&resid) / n;
        }
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        (grad, loss / n + r * l1)
    }

    fn kkt(grad: &DVector<f64>, beta: &[f64], r: f64) -> f64 {
        let mut worst = grad[0].abs();
        for (j, &b) in beta.iter().enumerate() {
            let g = grad[j + 1];
            let v = if b == 0.0 {
                (g.abs() - r).max(0.0)
            } else {
                (g + r * b.signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    fn objective_at(&self, eta: &DVector<f64>, beta: &[f64], r: f64) -> f64 {
        let loss: f64 = eta
            .iter()
            .zip(self.y.iter())
            .map(|(&e, &yi)| softplus(e) - yi * e)
            .sum();
        loss / self.y.len() as f64 + r * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// `Ĉᵀ W Ĉ / n` for `Ĉ = [1 X]`.
    fn weighted_hessian(&self, weights: &DVector<f64>) -> DMatrix<f64> {
        let (n, m) = self.x.shape();
        let z = DMatrix::from_fn(n, m + 1, |i, k| {
            let w = weights[i].sqrt();
            if k == 0 {
                w
            } else {
                w * self.x[(i, k - 1)]
            }
        });
        z.transpose() * &z / n as f64
    }

    /// Exact minimizer of the quadratic model among points whose nonzero
    /// coefficients follow `signs` (zero entries pinned at zero). Returns the
    /// offset from `coef`, or `None` if the minimizer breaks the pattern or
    /// the KKT conditions of an excluded coordinate.
    fn sign_pattern_step(
        grad: &DVector<f64>,
        hessian: &DMatrix<f64>,
        coef: &[f64],
        signs: &[f64],
        r: f64,
    ) -> Option<Vec<f64>> {
        let dim = coef.len();
        let active: Vec<usize> = (0..dim).filter(|&k| k == 0 || signs[k] != 0.0).collect();
        // offsets of the pinned coordinates are fixed at −coef
        let mut pinned = DVector::zeros(dim);
        for k in 1..dim {
            if signs[k] == 0.0 && coef[k] != 0.0 {
                pinned[k] = -coef[k];
            }
        }
        let pinned_pull = hessian * &pinned;
        let h = hessian.select_rows(&active).select_columns(&active);
        let rhs = DVector::from_iterator(
            active.len(),
            active
                .iter()
                .map(|&k| -(grad[k] + r * signs[k] + pinned_pull[k])),
        );
        let step = h.cholesky()?.solve(&rhs);
        let mut delta = pinned.as_slice().to_vec();
        for (c, &k) in active.iter().enumerate() {
            if k > 0 && (coef[k] + step[c]).signum() != signs[k] {
                return None;
            }
            delta[k] = step[c];
        }
        let offset = DVector::from_column_slice(&delta);
        let moved = hessian * offset;
        for k in 1..dim {
            if signs[k] == 0.0 && (grad[k] + moved[k]).abs() > r {
                return None;
            }
        }
        Some(delta)
    }

    /// Coordinate descent on the quadratic model
    /// `gᵀΔ + ½ ΔᵀHΔ + r ‖β + Δ‖₁` around `coef`. Returns the offset `Δ`.
    ///
    /// Sweeps run over a working set (intercept, nonzero coefficients, KKT
    /// violators); once it settles, excluded coordinates that would move
    /// join and the sweeps resume.
    fn quadratic_step(
        &self,
        grad: &DVector<f64>,
        hessian: &DMatrix<f64>,
        coef: &[f64],
        r: f64,
        inner_tol: f64,
    ) -> Vec<f64> {
        let dim = coef.len();
        let current: Vec<f64> = (0..dim)
            .map(|k| if k == 0 { 0.0 } else { sign(coef[k]) })
            .collect();
        if let Some(delta) = Self::sign_pattern_step(grad, hessian, coef, &current, r) {
            return delta;
        }
        let mut in_working: Vec<bool> = (0..dim)
            .map(|k| k == 0 || coef[k] != 0.0 || grad[k].abs() > r)
            .collect();
        let mut value = coef.to_vec();
        // u = H Δ
        let mut u = DVector::<f64>::zeros(dim);
        loop {
            let working: Vec<usize> = (0..dim).filter(|&k| in_working[k]).collect();
            for _ in 0..self.options.max_inner {
                let mut largest = 0.0f64;
                for &k in &working {
                    let a = hessian[(k, k)];
                    if !(a > 0.0) {
                        continue;
                    }
                    let target = value[k] - (grad[k] + u[k]) / a;
                    let new = if k == 0 { target } else { soft_threshold(target, r / a) };
                    let d = new - value[k];
                    if d != 0.0 {
                        value[k] = new;
                        u.axpy(d, &hessian.column(k), 1.0);
                        largest = largest.max(d.abs());
                    }
                }
                if largest < inner_tol {
                    break;
                }
            }
            let mut grew = false;
            for k in 1..dim {
                if !in_working[k] && (grad[k] + u[k]).abs() > r {
                    in_working[k] = true;
                    grew = true;
                }
            }
            if !grew {
                // polish with the exact solve on the pattern descent found
                let found: Vec<f64> = (0..dim)
                    .map(|k| if k == 0 { 0.0 } else { sign(value[k]) })
                    .collect();
                if found != current {
                    if let Some(delta) = Self::sign_pattern_step(grad, hessian, coef, &found, r) {
                        return delta;
                    }
                }
                return value.iter().zip(coef).map(|(v, c)| v - c).collect();
            }
        }
    }

    /// Fit at penalty `r`, optionally warm-started.
    ///
    /// Each outer pass minimizes a quadratic model of the loss with Hessian
    /// `Ĉᵀ W Ĉ / n`, `W = diag(p(1 − p))`, and backtracks along the result
    /// until the objective decreases. The weighted Hessian is reused while
    /// full steps keep shrinking quickly. If backtracking stalls, the pass
    /// retries with the curvature bound `W = I/4`, whose quadratic majorizes
    /// the loss and therefore always descends.
    pub fn fit(&self, r: f64, warm: Option<&LassoFit>) -> Result<LassoFit> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::Invalid(format!("penalty must be a finite nonnegative value, got {r}")));
        }
        let m = self.ncols();
        let mut coef = vec![0.0; m + 1];
        match warm {
            Some(w) if w.beta.len() == m => {
                coef[0] = w.intercept;
                coef[1..].copy_from_slice(&w.beta);
            }
            Some(w) => {
                return Err(Error::Dimension(format!(
                    "warm start has {} coefficients, design has {m}",
                    w.beta.len()
                )))
            }
            None => coef[0] = self.null_intercept(),
        }

        let mut eta = linear_predictor(self.x, coef[0], &coef[1..]);
        let (mut grad, mut objective) = self.evaluate(&eta, &coef[1..], r);
        let mut converged = false;
        let mut monotone = true;
        let mut iterations = 0;
        let mut hessian: Option<DMatrix<f64>> = None;
        let mut last_step = f64::INFINITY;
        let mut inner_tol = 1e-3;
        while iterations < self.options.max_passes {
            iterations += 1;
            let newton = match hessian.take() {
                Some(h) => h,
                None => {
                    let weights = eta.map(|e| {
                        let p = sigmoid(e);
                        (p * (1.0 - p)).max(MIN_WEIGHT)
                    });
                    self.weighted_hessian(&weights)
                }
            };
            let mut accepted = None;
            for (attempt, h) in [Some(&newton), None].into_iter().enumerate() {
                let h = match h {
                    Some(h) => h,
                    None => self.bound_hessian(),
                };
                let delta = self.quadratic_step(&grad, h, &coef, r, inner_tol);
                let mut q = DVector::from_element(eta.len(), delta[0]);
                for j in 0..m {
                    if delta[j + 1] != 0.0 {
                        q.axpy(delta[j + 1], &self.x.column(j), 1.0);
                    }
                }
                let mut t = 1.0;
                while t > 1e-10 {
                    let trial_eta = &eta + &q * t;
                    let trial: Vec<f64> =
                        coef.iter().zip(&delta).map(|(c, d)| c + t * d).collect();
                    let obj = self.objective_at(&trial_eta, &trial[1..], r);
                    if obj <= objective {
                        accepted = Some((trial, trial_eta, t, attempt, delta));
                        break;
                    }
                    t *= 0.5;
                }
                if accepted.is_some() {
                    break;
                }
            }
            let Some((trial, trial_eta, t, attempt, delta)) = accepted else {
                // no descent left at working precision
                converged = true;
                break;
            };
            let step = delta.iter().map(|d| (t * d).abs()).fold(0.0, f64::max);
            coef = trial;
            eta = trial_eta;
            let (g, obj) = self.evaluate(&eta, &coef[1..], r);
            if obj > objective {
                monotone = false;
            }
            grad = g;
            objective = obj;
            if step < self.options.tol {
                converged = true;
                break;
            }
            if coef.iter().any(|c| c.abs() > self.options.divergence) {
                break;
            }
            // keep a stale Hessian only while it still gives fast full steps
            if attempt == 0 && t == 1.0 && step < 0.25 * last_step {
                hessian = Some(newton);
            }
            last_step = step;
            inner_tol = (0.01 * step).clamp(0.1 * self.options.tol, inner_tol);
        }
        let beta = coef[1..].to_vec();
        let kkt_violation = Self::kkt(&grad, &beta, r);
        Ok(LassoFit {
            r,
            intercept: coef[0],
            beta,
            objective,
            iterations,
            converged: converged && objective.is_finite(),
            kkt_violation,
            monotone,
        })
    }

    /// Warm-started fits over `grid`, continuing past non-converged fits.
    fn fit_grid(&self, grid: &[f64]) -> Result<Vec<LassoFit>> {
        let mut fits: Vec<LassoFit> = Vec::with_capacity(grid.len());
        for &r in grid {
            let fit = self.fit(r, fits.last())?;
            fits.push(fit);
        }
        Ok(fits)
    }

    /// Path over an explicit decreasing grid; stops at the first fit that
    /// fails to converge.
    pub fn path(&self, grid: &[f64]) -> Result<LassoPath> {
        check_grid(grid)?;
        let m = self.ncols();
        let mut fits: Vec<LassoFit> = Vec::with_capacity(grid.len());
        let mut complete = true;
        for &r in grid {
            let fit = self.fit(r, fits.last())?;
            if !fit.converged {
                warn!("lasso path truncated at r = {r:.3e} after {} passes", fit.iterations);
                complete = false;
                break;
            }
            fits.push(fit);
        }
        let used = &grid[..fits.len()];
        let mut entry_level = vec![0.0; m];
        for j in 0..m {
            if let Some(k) = fits.iter().position(|f| f.beta[j] != 0.0) {
                entry_level[j] = used[k];
            }
        }
        let oscillation = detect_oscillation(&fits);
        if oscillation {
            warn!("lasso path coefficients jump between adjacent grid points");
        }
        Ok(LassoPath {
            grid: used.to_vec(),
            fits,
            entry_level,
            complete,
            oscillation,
        })
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Invalid("empty penalty grid".into()));
    }
    if grid.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
        return Err(Error::Invalid("penalty grid must be finite and nonnegative".into()));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Invalid("penalty grid must be strictly decreasing".into()));
    }
    Ok(())
}

/// Flags a path whose largest adjacent coefficient change exceeds ten
/// times the median adjacent change.
fn detect_oscillation(fits: &[LassoFit]) -> bool {
    if fits.len() < 3 {
        return false;
    }
    let mut changes: Vec<f64> = fits
        .windows(2)
        .map(|w| {
            w[0].beta
                .iter()
                .zip(&w[1].beta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let largest = changes.iter().copied().fold(0.0, f64::max);
    changes.sort_by(f64::total_cmp);
    let median = changes[changes.len() / 2];
    median > 0.0 && largest > 10.0 * median
}

/// Single fit at penalty `r`.
pub fn fit_logistic_lasso(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    r: f64,
    warm: Option<&LassoFit>,
) -> Result<LassoFit> {
    LogisticLasso::new(x, y)?.fit(r, warm)
}

/// Warm-started path over a log-spaced grid from `lambda_max` down to
/// `min_ratio * lambda_max`.
pub fn fit_path(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grid_size: usize,
    min_ratio: f64,
) -> Result<LassoPath> {
    let solver = LogisticLasso::new(x, y)?;
    let grid = log_grid(solver.lambda_max(), grid_size, min_ratio)?;
    solver.path(&grid)
}

/// Cross-validated penalty choice.
#[derive(Debug, Clone, Serialize)]
pub struct CrossValidation {
    pub r_star: f64,
    pub index: usize,
    /// Mean validation NLL per grid point, averaged over folds.
    pub curve: Vec<f64>,
    /// Fits across all folds that hit the pass cap.
    pub unconverged: usize,
    pub max_kkt_violation: f64,
}

/// K-fold choice of the penalty minimizing mean validation negative
/// log-likelihood, with ties going to the larger penalty.
pub fn cross_validate_lambda(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    folds: &FoldAssignment,
    grid: &[f64],
) -> Result<CrossValidation> {
    check_grid(grid)?;
    if folds.n() != x.nrows() || y.len() != x.nrows() {
        return Err(Error::Dimension("folds, x and y disagree on n".into()));
    }
    if grid.len() == 1 {
        return Ok(CrossValidation {
            r_star: grid[0],
            index: 0,
            curve: vec![f64::NAN],
            unconverged: 0,
            max_kkt_violation: 0.0,
        });
    }
    let per_fold: Vec<Result<(Vec<f64>, usize, f64)>> = (0..folds.k())
        .into_par_iter()
        .map(|fold| {
            let train = folds.training(fold);
            let valid = folds.validation(fold);
            let x_train = x.select_rows(&train);
            let y_train = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
            let x_valid = x.select_rows(&valid);
            let y_valid = DVector::from_iterator(valid.len(), valid.iter().map(|&i| y[i]));
            let solver = LogisticLasso::new(&x_train, &y_train).map_err(|e| match e {
                Error::DegenerateResponse(v) => Error::Invalid(format!(
                    "fold {} has a constant training response ({v})",
                    fold + 1
                )),
                other => other,
            })?;
            let fits = solver.fit_grid(grid)?;
            let unconverged = fits.iter().filter(|f| !f.converged).count();
            let kkt = fits
                .iter()
                .filter(|f| f.converged)
                .map(|f| f.kkt_violation)
                .fold(0.0, f64::max);
            let losses = fits
                .iter()
                .map(|f| mean_nll(&x_valid, &y_valid, f.intercept, &f.beta))
                .collect();
            Ok((losses, unconverged, kkt))
        })
        .collect();
    let mut curve = vec![0.0; grid.len()];
    let mut unconverged = 0;
    let mut max_kkt_violation = 0.0f64;
    for fold in per_fold {
        let (losses, u, kkt) = fold?;
        for (c, l) in curve.iter_mut().zip(losses) {
            *c += l;
        }
        unconverged += u;
        max_kkt_violation = max_kkt_violation.max(kkt);
    }
    let k = folds.k() as f64;
    curve.iter_mut().for_each(|c| *c /= k);
    let mut index = 0;
    for (i, &c) in curve.iter().enumerate() {
        if c < curve[index] {
            index = i;
        }
    }
    Ok(CrossValidation {
        r_star: grid[index],
        index,
        curve,
        unconverged,
        max_kkt_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_folds;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn standardized(x: DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows() as f64;
        let mut x = x;
        for mut c in x.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
            let s = (c.norm_squared() / n).sqrt();
            c /= s;
        }
        x
    }

    fn toy(n: usize, p: usize, beta: &[f64], seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = crate::seed::rng(seed);
        let x = standardized(DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal)));
        let y = DVector::from_fn(n, |i, _| {
            let eta: f64 = (0..p).map(|j| x[(i, j)] * beta[j]).sum();
            if rng.random::<f64>() < sigmoid(eta) {
                1.0
            } else {
                0.0
            }
        });
        (x, y)
    }

    #[test]
    fn lambda_max_two_points() {
        let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let y = DVector::from_row_slice(&[0.0, 1.0]);
        assert!((lambda_max(&x, &y).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lambda_max_rejects_constant_response() {
        let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let y = DVector::from_row_slice(&[1.0, 1.0]);
        assert!(matches!(lambda_max(&x, &y), Err(Error::DegenerateResponse(1))));
    }

    #[test]
    fn above_lambda_max_gives_null_model() {
        let (x, y) = toy(60, 4, &[1.0, -1.0, 0.0, 0.0], 1);
        let rmax = lambda_max(&x, &y).unwrap();
        let fit = fit_logistic_lasso(&x, &y, rmax * 1.01, None).unwrap();
        assert!(fit.converged);
        assert!(fit.beta.iter().all(|&b| b == 0.0));
        let ybar = y.mean();
        assert!((fit.intercept - (ybar / (1.0 - ybar)).ln()).abs() < 1e-6);
    }

    #[test]
    fn fits_satisfy_kkt_and_monotonicity() {
        let (x, y) = toy(80, 6, &[1.5, -1.0, 0.5, 0.0, 0.0, 0.0], 2);
        let rmax = lambda_max(&x, &y).unwrap();
        for frac in [0.5, 0.1, 0.01] {
            let fit = fit_logistic_lasso(&x, &y, rmax * frac, None).unwrap();
            assert!(fit.converged);
            assert!(fit.monotone);
            assert!(fit.kkt_violation <= 1e-4, "{}", fit.kkt_violation);
        }
    }

    #[test]
    fn separated_unpenalized_fit_is_flagged() {
        let x = standardized(DMatrix::from_row_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]));
        let y = DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let opts = SolverOptions {
            max_passes: 2_000,
            ..SolverOptions::default()
        };
        let fit = LogisticLasso::with_options(&x, &y, opts).unwrap().fit(0.0, None).unwrap();
        assert!(!fit.converged);
    }

    #[test]
    fn grid_endpoints() {
        let g = log_grid(2.0, 2, 1e-3).unwrap();
        assert_eq!(g, vec![2.0, 2e-3]);
        assert!(log_grid(2.0, 1, 0.1).is_err());
        assert!(log_grid(2.0, 5, 1.0).is_err());
    }

    #[test]
    fn path_entry_levels_lie_on_grid() {
        let (x, y) = toy(100, 5, &[2.0, 0.0, 0.0, 0.0, 0.0], 3);
        let path = fit_path(&x, &y, 30, 1e-2).unwrap();
        assert!(path.complete);
        assert!(path.fits[0].beta.iter().all(|&b| b == 0.0));
        for &z in &path.entry_level {
            assert!(z == 0.0 || path.grid.contains(&z));
        }
        assert!(path.entry_level[0] >= path.entry_level[1..].iter().copied().fold(0.0, f64::max));
    }

    #[test]
    fn never_active_variable_has_zero_entry() {
        let (x, y) = toy(100, 3, &[3.0, 0.0, 0.0], 4);
        let solver = LogisticLasso::new(&x, &y).unwrap();
        let rmax = solver.lambda_max();
        let path = solver.path(&[rmax, rmax * 0.9]).unwrap();
        assert_eq!(path.entry_level[1], 0.0);
        assert_eq!(path.entry_level[2], 0.0);
    }

    #[test]
    fn cv_single_point_grid() {
        let (x, y) = toy(40, 3, &[1.0, 0.0, 0.0], 5);
        let folds = make_folds(40, 5, Some(y.as_slice()), 1).unwrap();
        let cv = cross_validate_lambda(&x, &y, &folds, &[0.05]).unwrap();
        assert_eq!(cv.r_star, 0.05);
    }

    #[test]
    fn cv_is_deterministic() {
        let (x, y) = toy(80, 4, &[1.0, -1.0, 0.0, 0.0], 6);
        let rmax = lambda_max(&x, &y).unwrap();
        let grid = log_grid(rmax, 20, 1e-2).unwrap();
        let folds = make_folds(80, 5, Some(y.as_slice()), 9).unwrap();
        let a = cross_validate_lambda(&x, &y, &folds, &grid).unwrap();
        let b = cross_validate_lambda(&x, &y, &folds, &grid).unwrap();
        assert_eq!(a.r_star, b.r_star);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn cv_rejects_constant_training_fold() {
        let x = standardized(DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]));
        let y = DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.0]);
        // fold 0 holds only the positive
        let folds = make_folds(4, 4, None, 0).unwrap();
        let grid = [0.2, 0.1];
        assert!(cross_validate_lambda(&x, &y, &folds, &grid).is_err());
    }

    #[test]
    fn rejects_bad_grid_and_penalty() {
        let (x, y) = toy(30, 2, &[1.0, 0.0], 7);
        let solver = LogisticLasso::new(&x, &y).unwrap();
        assert!(solver.path(&[0.1, 0.2]).is_err());
        assert!(solver.fit(-1.0, None).is_err());
    }
}
