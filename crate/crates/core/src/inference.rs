//! Unpenalized refits on a selected support, marginal effects and
//! cross-validated prediction error.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::data::{Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::glm::{mean_nll, sigmoid};
use crate::pipeline::Selector;
use crate::seed::{self, stream};

pub const IRLS_TOL: f64 = 1e-10;
pub const IRLS_MAX_ITER: usize = 100;
const DIVERGENCE_NORM: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RefitKind {
    Logistic,
    Ols,
}

/// Column scale of the refit design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitScale {
    #[default]
    StandardizedAll,
    /// Binary (0/1) columns stay on their raw scale.
    StandardizedContinuousOnly,
    Raw,
}

/// Coefficients of an unpenalized refit. Index 0 of `coef`, `se` and
/// `p_values` is the intercept; index `i + 1` is column `support[i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefitEstimates {
    pub support: Vec<usize>,
    pub names: Vec<String>,
    pub kind: RefitKind,
    pub scale: RefitScale,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Average marginal effects of the support columns (logistic only).
    pub marginal_effects: Option<Vec<f64>>,
    pub marginal_effect_se: Option<Vec<f64>>,
    /// Max-abs score (logistic) or normal-equation residual (OLS).
    pub certificate: f64,
    pub iterations: usize,
}

impl RefitEstimates {
    pub fn stars(&self) -> Vec<&'static str> {
        self.p_values.iter().map(|&p| stars(p)).collect()
    }

    /// Aligned text: one line per coefficient, standard error beneath.
    pub fn to_text(&self) -> String {
        inference_table(&[("Estimate", self)])
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["term", "estimate", "se", "p_value", "stars", "ame", "ame_se"])?;
        for i in 0..self.coef.len() {
            let ame = |v: &Option<Vec<f64>>| match (v, i) {
                (Some(v), i) if i > 0 => format!("{:?}", v[i - 1]),
                _ => String::new(),
            };
            wtr.write_record([
                self.names[i].clone(),
                format!("{:?}", self.coef[i]),
                format!("{:?}", self.se[i]),
                format!("{:?}", self.p_values[i]),
                stars(self.p_values[i]).to_string(),
                ame(&self.marginal_effects),
                ame(&self.marginal_effect_se),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// `***`, `**`, `*` at the 1%, 5% and 10% levels.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

fn two_sided_p(z: f64) -> f64 {
    if z.is_finite() {
        erfc(z.abs() / std::f64::consts::SQRT_2)
    } else {
        f64::NAN
    }
}

/// Side-by-side coefficient columns: estimate with stars, `(se)` beneath.
pub fn inference_table(columns: &[(&str, &RefitEstimates)]) -> String {
    let mut terms: Vec<String> = Vec::new();
    for (_, est) in columns {
        for name in &est.names {
            if !terms.contains(name) {
                terms.push(name.clone());
            }
        }
    }
    let mut cells: Vec<Vec<(String, String)>> = Vec::new();
    for term in &terms {
        let row = columns
            .iter()
            .map(|(_, est)| match est.names.iter().position(|n| n == term) {
                Some(i) => (
                    format!("{:.4}{}", est.coef[i], stars(est.p_values[i])),
                    format!("({:.4})", est.se[i]),
                ),
                None => (String::new(), String::new()),
            })
            .collect();
        cells.push(row);
    }
    let label_width = terms.iter().map(|t| t.len()).max().unwrap_or(0).max(4);
    let widths: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(c, (title, _))| {
            cells
                .iter()
                .flat_map(|row| [row[c].0.len(), row[c].1.len()])
                .chain([title.len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:label_width$}", "");
    for ((title, _), w) in columns.iter().zip(&widths) {
        let _ = write!(out, "  {title:>w$}");
    }
    out.push('\n');
    for (term, row) in terms.iter().zip(&cells) {
        let _ = write!(out, "{term:label_width$}");
        for ((est, _), w) in row.iter().zip(&widths) {
            let _ = write!(out, "  {est:>w$}");
        }
        out.push('\n');
        let _ = write!(out, "{:label_width$}", "");
        for ((_, se), w) in row.iter().zip(&widths) {
            let _ = write!(out, "  {se:>w$}");
        }
        out.push('\n');
    }
    out.push_str("* p<0.1, ** p<0.05, *** p<0.01\n");
    out
}

fn check_support(d: &Dataset, support: &[usize]) -> Result<Vec<usize>> {
    if let Some(&j) = support.iter().find(|&&j| j >= d.p()) {
        return Err(Error::IndexOutOfRange { index: j + 1, p: d.p() });
    }
    let mut s = support.to_vec();
    s.sort_unstable();
    s.dedup();
    Ok(s)
}

/// Design `[1 X_S]` on the requested scale.
pub fn refit_design(d: &Dataset, support: &[usize], scale: RefitScale) -> Result<DMatrix<f64>> {
    let support = check_support(d, support)?;
    let raw = d.raw_x();
    let binary = d.binary_columns();
    let mut z = DMatrix::from_element(d.n(), support.len() + 1, 1.0);
    let n = d.n() as f64;
    for (c, &j) in support.iter().enumerate() {
        let standardize = match scale {
            RefitScale::StandardizedAll => true,
            RefitScale::StandardizedContinuousOnly => !binary[j],
            RefitScale::Raw => false,
        };
        let mut col = raw.column(j).into_owned();
        if standardize {
            if d.is_standardized() {
                col.copy_from(&d.x().column(j));
            } else {
                let mean = col.mean();
                col.add_scalar_mut(-mean);
                let rms = (col.norm_squared() / n).sqrt();
                if !(rms > 0.0) {
                    return Err(Error::ConstantColumn(d.column_names()[j].clone()));
                }
                col /= rms;
            }
        }
        z.set_column(c + 1, &col);
    }
    Ok(z)
}

fn term_names(d: &Dataset, support: &[usize]) -> Vec<String> {
    std::iter::once("(Intercept)".to_string())
        .chain(support.iter().map(|&j| d.column_names()[j].clone()))
        .collect()
}

fn gram(z: &DMatrix<f64>, w: Option<&DVector<f64>>) -> DMatrix<f64> {
    match w {
        Some(w) => {
            let mut zw = z.clone();
            for (i, mut row) in zw.row_iter_mut().enumerate() {
                row *= w[i].sqrt();
            }
            zw.transpose() * &zw
        }
        None => z.transpose() * z,
    }
}

fn log_likelihood(eta: &DVector<f64>, y: &DVector<f64>) -> f64 {
    eta.iter()
        .zip(y.iter())
        .map(|(&e, &yi)| yi * e - (e.max(0.0) + (-e.abs()).exp().ln_1p()))
        .sum()
}

fn logistic_score(z: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
    let eta = z * theta;
    let resid = DVector::from_iterator(y.len(), y.iter().zip(eta.iter()).map(|(&yi, &e)| yi - sigmoid(e)));
    z.transpose() * resid
}

/// Logistic maximum likelihood by IRLS with step-halving.
///
/// Returns `(theta, iterations, max |score|)`.
pub fn logistic_mle(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, usize, f64)> {
    let n = y.len();
    if z.nrows() != n {
        return Err(Error::Dimension("design and response disagree on n".into()));
    }
    if z.ncols() >= n {
        return Err(Error::Invalid(format!(
            "refit needs fewer parameters ({}) than observations ({n})",
            z.ncols()
        )));
    }
    let ybar = y.mean();
    if ybar == 0.0 || ybar == 1.0 {
        return Err(Error::DegenerateResponse(ybar as u8));
    }
    let mut theta = DVector::zeros(z.ncols());
    theta[0] = (ybar / (1.0 - ybar)).ln();
    let mut eta = z * &theta;
    let mut ll = log_likelihood(&eta, y);
    for iter in 0..=IRLS_MAX_ITER {
        let prob = eta.map(sigmoid);
        let score = z.transpose() * (y - &prob);
        let score_max = score.amax();
        if score_max <= IRLS_TOL {
            if prob.iter().zip(y.iter()).all(|(p, yi)| (p - yi).abs() < 1e-6) {
                return Err(Error::Separation { norm: theta.norm() });
            }
            return Ok((theta, iter, score_max));
        }
        if iter == IRLS_MAX_ITER {
            break;
        }
        let weights = prob.map(|p| p * (1.0 - p));
        let info = gram(z, Some(&weights));
        let delta = match info.cholesky() {
            Some(chol) => chol.solve(&score),
            None if eta.amax() > 30.0 => return Err(Error::Separation { norm: theta.norm() }),
            None => return Err(Error::Singular("Fisher information of the refit".into())),
        };
        let mut t = 1.0;
        loop {
            let candidate = &theta + &delta * t;
            let cand_eta = z * &candidate;
            let cand_ll = log_likelihood(&cand_eta, y);
            if cand_ll >= ll - 1e-12 * ll.abs() || t < 1e-10 {
                theta = candidate;
                eta = cand_eta;
                ll = cand_ll;
                break;
            }
            t *= 0.5;
        }
        if theta.amax() > DIVERGENCE_NORM {
            return Err(Error::Separation { norm: theta.norm() });
        }
        // stalled at working precision with a certifiable score
        if (&delta * t).amax() <= 1e-14 * (1.0 + theta.amax()) && score_max <= 1e-6 {
            return Ok((theta, iter + 1, score_max));
        }
    }
    let score_max = logistic_score(z, y, &theta).amax();
    if theta.amax() > 20.0 {
        Err(Error::Separation { norm: theta.norm() })
    } else {
        Err(Error::NotConverged(format!(
            "IRLS stopped after {IRLS_MAX_ITER} iterations with |score| = {score_max:.3e}"
        )))
    }
}

fn invert_information(info: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = info
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))?;
    let inv = chol.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(what.to_string()));
    }
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Unpenalized logistic refit on standardized columns.
pub fn refit_logistic(d: &Dataset, support: &[usize]) -> Result<RefitEstimates> {
    refit_logistic_scaled(d, support, RefitScale::StandardizedAll)
}

pub fn refit_logistic_scaled(
    d: &Dataset,
    support: &[usize],
    scale: RefitScale,
) -> Result<RefitEstimates> {
    let support = check_support(d, support)?;
    let z = refit_design(d, &support, scale)?;
    let y = d.y();
    let (theta, iterations, certificate) = logistic_mle(&z, y)?;
    let prob = (&z * &theta).map(sigmoid);
    let weights = prob.map(|p| p * (1.0 - p));
    let cov = invert_information(gram(&z, Some(&weights)), "Fisher information")?;
    let se: Vec<f64> = (0..theta.len()).map(|i| cov[(i, i)].sqrt()).collect();
    let p_values = theta.iter().zip(&se).map(|(b, s)| two_sided_p(b / s)).collect();
    let mut est = RefitEstimates {
        names: term_names(d, &support),
        support,
        kind: RefitKind::Logistic,
        scale,
        coef: theta.iter().copied().collect(),
        se,
        p_values,
        marginal_effects: None,
        marginal_effect_se: None,
        certificate,
        iterations,
    };
    let (ame, ame_se) = marginal_effects_with_cov(&est, &z, &cov);
    est.marginal_effects = Some(ame);
    est.marginal_effect_se = Some(ame_se);
    Ok(est)
}

fn marginal_effects_with_cov(
    fit: &RefitEstimates,
    z: &DMatrix<f64>,
    cov: &DMatrix<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let n = z.nrows() as f64;
    let theta = DVector::from_column_slice(&fit.coef);
    let prob = (z * &theta).map(sigmoid);
    let m = prob.iter().map(|p| p * (1.0 - p)).sum::<f64>() / n;
    // d m / d theta = mean_i p(1-p)(1-2p) z_i
    let curvature = prob.map(|p| p * (1.0 - p) * (1.0 - 2.0 * p));
    let dm = z.transpose() * curvature / n;
    let mut ame = Vec::with_capacity(fit.support.len());
    let mut se = Vec::with_capacity(fit.support.len());
    for j in 1..theta.len() {
        let mut g = &dm * theta[j];
        g[j] += m;
        ame.push(theta[j] * m);
        se.push((g.transpose() * cov * &g)[(0, 0)].max(0.0).sqrt());
    }
    (ame, se)
}

/// Average marginal effects `β_j · mean(p(1 − p))` of a logistic refit, with
/// delta-method standard errors.
pub fn marginal_effects(fit: &RefitEstimates, d: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    if fit.kind != RefitKind::Logistic {
        return Err(Error::Invalid("marginal effects need a logistic refit".into()));
    }
    let z = refit_design(d, &fit.support, fit.scale)?;
    if z.ncols() != fit.coef.len() {
        return Err(Error::Dimension("refit does not match the dataset".into()));
    }
    let theta = DVector::from_column_slice(&fit.coef);
    let prob = (&z * &theta).map(sigmoid);
    let weights = prob.map(|p| p * (1.0 - p));
    let cov = invert_information(gram(&z, Some(&weights)), "Fisher information")?;
    Ok(marginal_effects_with_cov(fit, &z, &cov))
}

/// Least-squares refit of the binary response on the support.
pub fn refit_ols(d: &Dataset, support: &[usize], scale: RefitScale) -> Result<RefitEstimates> {
    let support = check_support(d, support)?;
    let z = refit_design(d, &support, scale)?;
    let y = d.y();
    let gram = gram(&z, None);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("refit design is rank deficient".into()))?;
    let diag_ratio = {
        let l = chol.l_dirty();
        let d: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].abs()).collect();
        let max = d.iter().copied().fold(0.0, f64::max);
        d.iter().copied().fold(f64::INFINITY, f64::min) / max
    };
    if !(diag_ratio > 1e-7) {
        return Err(Error::Singular("refit design is rank deficient".into()));
    }
    let zty = z.transpose() * y;
    let mut beta = chol.solve(&zty);
    // one step of iterative refinement
    let correction = chol.solve(&(&zty - &gram * &beta));
    beta += correction;
    let resid = y - &z * &beta;
    let certificate = (z.transpose() * &resid).amax();
    let (n, k) = (z.nrows(), z.ncols());
    let cov = chol.inverse();
    let se: Vec<f64> = if n > k {
        let sigma2 = resid.norm_squared() / (n - k) as f64;
        (0..k).map(|i| (sigma2 * cov[(i, i)]).sqrt()).collect()
    } else {
        vec![f64::NAN; k]
    };
    let p_values = beta.iter().zip(&se).map(|(b, s)| two_sided_p(b / s)).collect();
    Ok(RefitEstimates {
        names: term_names(d, &support),
        support,
        kind: RefitKind::Ols,
        scale,
        coef: beta.iter().copied().collect(),
        se,
        p_values,
        marginal_effects: None,
        marginal_effect_se: None,
        certificate,
        iterations: 1,
    })
}

/// Cross-validated prediction error of a selection procedure.
#[derive(Debug, Clone, Serialize)]
pub struct PredictionReport {
    pub method_label: String,
    /// Size of the support selected on the full data.
    pub model_size: usize,
    /// Mean validation negative log-likelihood per observation, averaged
    /// over the folds that succeeded.
    pub pred_error: f64,
    pub fold_errors: Vec<Option<f64>>,
    pub fold_model_sizes: Vec<Option<usize>>,
    pub failed_folds: usize,
    pub folds: FoldAssignment,
}

struct FoldOutcome {
    error: f64,
    size: usize,
}

fn evaluate_fold(
    d: &Dataset,
    selector: &dyn Selector,
    folds: &FoldAssignment,
    fold: usize,
    seed: u64,
) -> Result<FoldOutcome> {
    let train = d.subset_rows(&folds.training(fold))?.standardize()?;
    let valid = d.subset_rows(&folds.validation(fold))?.standardize_like(&train)?;
    let selection = selector.select(&train, seed)?;
    let refit = refit_logistic(&train, &selection.support)?;
    let x_valid = valid.x().select_columns(&refit.support);
    let error = mean_nll(&x_valid, valid.y(), refit.coef[0], &refit.coef[1..]);
    Ok(FoldOutcome {
        error,
        size: selection.support.len(),
    })
}

/// Re-runs `selector` on each training fold, refits a logistic model on
/// the chosen support and scores it on the held-out fold.
///
/// Folds whose selection or refit fails are excluded with a warning.
pub fn cv_prediction_error(
    d: &Dataset,
    selector: &dyn Selector,
    folds: &FoldAssignment,
    seed: u64,
) -> Result<PredictionReport> {
    if folds.n() != d.n() {
        return Err(Error::Dimension("folds and dataset disagree on n".into()));
    }
    let base = seed::derive(seed, stream::CV_PREDICTION);
    let outcomes: Vec<Result<FoldOutcome>> = (0..folds.k())
        .into_par_iter()
        .map(|fold| evaluate_fold(d, selector, folds, fold, seed::derive(base, fold as u64)))
        .collect();
    let mut fold_errors = Vec::with_capacity(folds.k());
    let mut fold_model_sizes = Vec::with_capacity(folds.k());
    for (fold, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                fold_errors.push(Some(o.error));
                fold_model_sizes.push(Some(o.size));
            }
            Err(e) => {
                log::warn!("fold {} excluded: {e}", fold + 1);
                fold_errors.push(None);
                fold_model_sizes.push(None);
            }
        }
    }
    let ok: Vec<f64> = fold_errors.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(Error::NotConverged("every fold failed".into()));
    }
    let full = if d.is_standardized() {
        d.clone()
    } else {
        d.standardize()?
    };
    let model_size = selector.select(&full, seed)?.support.len();
    Ok(PredictionReport {
        method_label: selector.label(),
        model_size,
        pred_error: ok.iter().sum::<f64>() / ok.len() as f64,
        failed_folds: folds.k() - ok.len(),
        fold_errors,
        fold_model_sizes,
        folds: folds.clone(),
    })
}

/// Three-column text table: method, model size, prediction error.
pub fn prediction_table(reports: &[PredictionReport]) -> String {
    let rows: Vec<[String; 3]> = reports
        .iter()
        .map(|r| {
            [
                r.method_label.clone(),
                r.model_size.to_string(),
                format!("{:.4}", r.pred_error),
            ]
        })
        .collect();
    render_prediction_rows(&rows)
}

pub fn render_prediction_rows(rows: &[[String; 3]]) -> String {
    let header = ["Method", "Model size", "Pred. error"];
    let mut widths = header.map(str::len);
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: [&str; 3]| {
        format!(
            "{:<w0$} | {:>w1$} | {:>w2$}\n",
            cells[0],
            cells[1],
            cells[2],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2]
        )
    };
    let mut out = line(header);
    out.push_str(&format!(
        "{}-+-{}-+-{}\n",
        "-".repeat(widths[0]),
        "-".repeat(widths[1]),
        "-".repeat(widths[2])
    ));
    for row in rows {
        out.push_str(&line([&row[0], &row[1], &row[2]]));
    }
    out
}
