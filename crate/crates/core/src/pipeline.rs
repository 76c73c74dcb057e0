//! Selection procedures: aggregated knockoff filters and reference
//! selectors.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_folds, Dataset};
use crate::error::{Error, Result};
use crate::filter::{
    aggregate_afdr, lcd_statistics, lsm_statistics, split_level, threshold, SelectionResult,
    Variant, WStatistics,
};
use crate::glm::{cross_validate_lambda, log_grid, LassoFit, LogisticLasso};
use crate::knockoffs::{augmented_design, sample_knockoffs, KnockoffModel, DEFAULT_SLACK};
use crate::seed::{self, stream};

/// Solver health accumulated over every fit a selector ran.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub fits: usize,
    pub unconverged: usize,
    /// Largest KKT violation among converged fits.
    pub max_kkt_violation: f64,
}

impl FitDiagnostics {
    fn record(&mut self, fits: &[LassoFit]) {
        for f in fits {
            self.fits += 1;
            if f.converged {
                self.max_kkt_violation = self.max_kkt_violation.max(f.kkt_violation);
            } else {
                self.unconverged += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &FitDiagnostics) {
        self.fits += other.fits;
        self.unconverged += other.unconverged;
        self.max_kkt_violation = self.max_kkt_violation.max(other.max_kkt_violation);
    }
}

/// Output of a selector: 0-based column indices, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub support: Vec<usize>,
    pub diagnostics: FitDiagnostics,
}

/// A variable-selection procedure on standardized data.
pub trait Selector: Sync {
    fn label(&self) -> String;
    fn select(&self, d: &Dataset, seed: u64) -> Result<Selection>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    #[serde(rename = "lsm")]
    Lsm,
    #[serde(rename = "lcd-cv")]
    LcdCv,
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statistic::Lsm => f.write_str("lsm"),
            Statistic::LcdCv => f.write_str("lcd-cv"),
        }
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lsm" => Ok(Statistic::Lsm),
            "lcd-cv" | "lcd_cv" | "lcd" => Ok(Statistic::LcdCv),
            other => Err(Error::Invalid(format!("unknown statistic {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnockoffConfig {
    pub statistic: Statistic,
    pub q: f64,
    pub k: usize,
    pub variant: Variant,
    pub grid_size: usize,
    pub min_ratio: f64,
    pub cv_folds: usize,
    pub slack: f64,
}

impl Default for KnockoffConfig {
    fn default() -> Self {
        Self {
            statistic: Statistic::LcdCv,
            q: 0.1,
            k: 3,
            variant: Variant::KnockoffPlus,
            grid_size: 100,
            min_ratio: 1e-4,
            cv_folds: 10,
            slack: DEFAULT_SLACK,
        }
    }
}

impl KnockoffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::Invalid(format!("q must lie in [0, 1], got {}", self.q)));
        }
        if self.k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        validate_grid(self.grid_size, self.min_ratio)?;
        if self.statistic == Statistic::LcdCv && self.cv_folds < 2 {
            return Err(Error::Invalid("cv folds must be at least 2".into()));
        }
        if !(self.slack > 0.0 && self.slack <= 1.0) {
            return Err(Error::Invalid(format!("slack must lie in (0, 1], got {}", self.slack)));
        }
        Ok(())
    }

    /// Method name in result tables, e.g. `AFDR LCD_CV`.
    pub fn label(&self) -> String {
        let scheme = if self.k == 1 { "FDR" } else { "AFDR" };
        let stat = match self.statistic {
            Statistic::Lsm => "LSM",
            Statistic::LcdCv => "LCD_CV",
        };
        format!("{scheme} {stat}")
    }
}

fn validate_grid(grid_size: usize, min_ratio: f64) -> Result<()> {
    if grid_size < 2 {
        return Err(Error::Invalid("grid size must be at least 2".into()));
    }
    if !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(Error::Invalid(format!("min ratio must lie in (0, 1), got {min_ratio}")));
    }
    Ok(())
}

/// One knockoff run: statistics, its own threshold and the seed used.
#[derive(Debug, Clone)]
pub struct KnockoffRun {
    pub seed: u64,
    pub statistics: WStatistics,
    pub selection: SelectionResult,
    /// Penalty used for LCD statistics.
    pub r_star: Option<f64>,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone)]
pub struct KnockoffOutcome {
    pub label: String,
    pub runs: Vec<KnockoffRun>,
    pub selection: SelectionResult,
    pub diagnostics: FitDiagnostics,
}

/// The knockoff filter, aggregated over `k` independent knockoff draws at
/// level `q / k` each.
#[derive(Debug, Clone, Default)]
pub struct KnockoffSelector {
    pub config: KnockoffConfig,
}

impl KnockoffSelector {
    pub fn new(config: KnockoffConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Seed of run `i` under the parent seed.
    pub fn run_seed(seed: u64, run: usize) -> u64 {
        seed::derive(seed::derive(seed, stream::KNOCKOFF), run as u64)
    }

    pub fn run(&self, d: &Dataset, seed: u64) -> Result<KnockoffOutcome> {
        self.config.validate()?;
        let model = KnockoffModel::fit(d, self.config.slack)?;
        self.run_with_model(d, &model, seed)
    }

    pub fn run_with_model(
        &self,
        d: &Dataset,
        model: &KnockoffModel,
        seed: u64,
    ) -> Result<KnockoffOutcome> {
        let levels = split_level(self.config.q, self.config.k);
        let runs: Vec<KnockoffRun> = levels
            .par_iter()
            .enumerate()
            .map(|(i, &q)| self.single_run(d, model, Self::run_seed(seed, i), q))
            .collect::<Result<_>>()?;
        let selections: Vec<SelectionResult> = runs.iter().map(|r| r.selection.clone()).collect();
        let selection = aggregate_afdr(&selections)?;
        let mut diagnostics = FitDiagnostics::default();
        for r in &runs {
            diagnostics.merge(&r.diagnostics);
        }
        Ok(KnockoffOutcome {
            label: self.config.label(),
            runs,
            selection,
            diagnostics,
        })
    }

    fn single_run(
        &self,
        d: &Dataset,
        model: &KnockoffModel,
        run_seed: u64,
        q: f64,
    ) -> Result<KnockoffRun> {
        let copy = sample_knockoffs(d, model, run_seed)?;
        let augmented = augmented_design(d, &copy)?;
        let solver = LogisticLasso::new(&augmented, d.y())?;
        let grid = log_grid(solver.lambda_max(), self.config.grid_size, self.config.min_ratio)?;
        let mut diagnostics = FitDiagnostics::default();
        let (statistics, r_star) = match self.config.statistic {
            Statistic::Lsm => {
                let path = solver.path(&grid)?;
                diagnostics.record(&path.fits);
                if !path.complete {
                    diagnostics.unconverged += 1;
                    log::warn!(
                        "path truncated after {} of {} grid points",
                        path.fits.len(),
                        grid.len()
                    );
                }
                (lsm_statistics(&path)?, None)
            }
            Statistic::LcdCv => {
                let folds = make_folds(
                    d.n(),
                    self.config.cv_folds,
                    Some(d.y().as_slice()),
                    seed::derive(run_seed, stream::FOLDS),
                )?;
                let cv = cross_validate_lambda(&augmented, d.y(), &folds, &grid)?;
                diagnostics.fits += cv.curve.len() * folds.k();
                diagnostics.unconverged += cv.unconverged;
                diagnostics.max_kkt_violation = cv.max_kkt_violation;
                let path = solver.path(&grid[..=cv.index])?;
                diagnostics.record(&path.fits);
                let fit = path.fits.last().filter(|_| path.complete).ok_or_else(|| {
                    Error::NotConverged(format!("no converged fit at r = {:.3e}", cv.r_star))
                })?;
                (lcd_statistics(fit)?, Some(cv.r_star))
            }
        };
        let selection = threshold(&statistics, q, self.config.variant)?.with_seed(run_seed);
        Ok(KnockoffRun {
            seed: run_seed,
            statistics,
            selection,
            r_star,
            diagnostics,
        })
    }
}

impl Selector for KnockoffSelector {
    fn label(&self) -> String {
        self.config.label()
    }

    fn select(&self, d: &Dataset, seed: u64) -> Result<Selection> {
        let outcome = self.run(d, seed)?;
        Ok(Selection {
            support: outcome.selection.selected,
            diagnostics: outcome.diagnostics,
        })
    }
}

/// Plain l1 logistic regression at the cross-validated penalty.
#[derive(Debug, Clone)]
pub struct LassoCvSelector {
    pub grid_size: usize,
    pub min_ratio: f64,
    pub cv_folds: usize,
}

impl Default for LassoCvSelector {
    fn default() -> Self {
        Self {
            grid_size: 100,
            min_ratio: 1e-4,
            cv_folds: 10,
        }
    }
}

impl LassoCvSelector {
    /// The fit at the chosen penalty.
    pub fn fit(&self, d: &Dataset, seed: u64) -> Result<(LassoFit, FitDiagnostics)> {
        validate_grid(self.grid_size, self.min_ratio)?;
        let solver = LogisticLasso::new(d.x(), d.y())?;
        let grid = log_grid(solver.lambda_max(), self.grid_size, self.min_ratio)?;
        let folds = make_folds(
            d.n(),
            self.cv_folds,
            Some(d.y().as_slice()),
            seed::derive(seed, stream::FOLDS),
        )?;
        let cv = cross_validate_lambda(d.x(), d.y(), &folds, &grid)?;
        let mut diagnostics = FitDiagnostics {
            fits: cv.curve.len() * folds.k(),
            unconverged: cv.unconverged,
            max_kkt_violation: cv.max_kkt_violation,
        };
        let path = solver.path(&grid[..=cv.index])?;
        diagnostics.record(&path.fits);
        match path.fits.last() {
            Some(fit) if path.complete => Ok((fit.clone(), diagnostics)),
            _ => Err(Error::NotConverged(format!(
                "no converged fit at r = {:.3e}",
                cv.r_star
            ))),
        }
    }
}

impl Selector for LassoCvSelector {
    fn label(&self) -> String {
        "LASSO".into()
    }

    fn select(&self, d: &Dataset, seed: u64) -> Result<Selection> {
        let (fit, diagnostics) = self.fit(d, seed)?;
        Ok(Selection {
            support: fit.support(),
            diagnostics,
        })
    }
}

/// Every column.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullSelector;

impl Selector for FullSelector {
    fn label(&self) -> String {
        "Full".into()
    }

    fn select(&self, d: &Dataset, _seed: u64) -> Result<Selection> {
        Ok(Selection {
            support: (0..d.p()).collect(),
            diagnostics: FitDiagnostics::default(),
        })
    }
}

/// Intercept only.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptySelector;

impl Selector for EmptySelector {
    fn label(&self) -> String {
        "Empty".into()
    }

    fn select(&self, _d: &Dataset, _seed: u64) -> Result<Selection> {
        Ok(Selection {
            support: Vec::new(),
            diagnostics: FitDiagnostics::default(),
        })
    }
}

/// A predetermined support, e.g. the true one in simulations.
#[derive(Debug, Clone)]
pub struct FixedSupport {
    pub support: Vec<usize>,
    pub label: String,
}

impl Selector for FixedSupport {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn select(&self, d: &Dataset, _seed: u64) -> Result<Selection> {
        if let Some(&j) = self.support.iter().find(|&&j| j >= d.p()) {
            return Err(Error::IndexOutOfRange { index: j + 1, p: d.p() });
        }
        let mut support = self.support.clone();
        support.sort_unstable();
        support.dedup();
        Ok(Selection {
            support,
            diagnostics: FitDiagnostics::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn toy(n: usize, p: usize, signal: &[(usize, f64)], seed: u64) -> Dataset {
        let mut rng = seed::rng(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| {
            let eta: f64 = signal.iter().map(|&(j, b)| b * x[(i, j)]).sum();
            let prob = 1.0 / (1.0 + (-eta).exp());
            if rng.random::<f64>() < prob {
                1.0
            } else {
                0.0
            }
        });
        Dataset::from_matrix(x, y).unwrap().standardize().unwrap()
    }

    #[test]
    fn labels_follow_method_naming() {
        let mut c = KnockoffConfig::default();
        assert_eq!(c.label(), "AFDR LCD_CV");
        c.k = 1;
        assert_eq!(c.label(), "FDR LCD_CV");
        c.statistic = Statistic::Lsm;
        assert_eq!(c.label(), "FDR LSM");
        assert_eq!(LassoCvSelector::default().label(), "LASSO");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = KnockoffConfig::default();
        for bad in [
            KnockoffConfig { q: 1.5, ..base.clone() },
            KnockoffConfig { k: 0, ..base.clone() },
            KnockoffConfig { grid_size: 1, ..base.clone() },
            KnockoffConfig { min_ratio: 1.0, ..base.clone() },
            KnockoffConfig { cv_folds: 1, ..base.clone() },
        ] {
            assert!(KnockoffSelector::new(bad).is_err());
        }
    }

    #[test]
    fn statistic_parsing() {
        assert_eq!("lsm".parse::<Statistic>().unwrap(), Statistic::Lsm);
        assert_eq!("lcd-cv".parse::<Statistic>().unwrap(), Statistic::LcdCv);
        assert!("bogus".parse::<Statistic>().is_err());
    }

    #[test]
    fn single_run_has_one_provenance_record() {
        let d = toy(120, 6, &[(0, 3.0)], 1);
        let selector = KnockoffSelector::new(KnockoffConfig {
            statistic: Statistic::Lsm,
            k: 1,
            grid_size: 30,
            ..KnockoffConfig::default()
        })
        .unwrap();
        let out = selector.run(&d, 5).unwrap();
        assert_eq!(out.runs.len(), 1);
        assert_eq!(out.selection.runs.len(), 1);
        assert_eq!(out.selection, out.runs[0].selection);
    }

    #[test]
    fn aggregated_run_is_union_and_deterministic() {
        let d = toy(150, 8, &[(0, 2.5), (1, -2.5)], 2);
        let selector = KnockoffSelector::new(KnockoffConfig {
            statistic: Statistic::LcdCv,
            q: 0.5,
            k: 3,
            grid_size: 25,
            cv_folds: 5,
            ..KnockoffConfig::default()
        })
        .unwrap();
        let a = selector.run(&d, 9).unwrap();
        let b = selector.run(&d, 9).unwrap();
        assert_eq!(a.selection, b.selection);
        assert_eq!(a.runs.len(), 3);
        let seeds: Vec<u64> = a.runs.iter().map(|r| r.seed).collect();
        assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2]);
        for run in &a.runs {
            assert!(run.selection.selected.iter().all(|j| a.selection.selected.contains(j)));
            assert!(run.r_star.is_some());
            assert_eq!(run.statistics.p(), 8);
        }
        assert!(a.diagnostics.max_kkt_violation <= 1e-4);
    }

    #[test]
    fn lasso_cv_finds_strong_signal() {
        let d = toy(300, 10, &[(3, 3.0)], 3);
        let sel = LassoCvSelector {
            grid_size: 40,
            ..LassoCvSelector::default()
        }
        .select(&d, 1)
        .unwrap();
        assert!(sel.support.contains(&3));
    }

    #[test]
    fn reference_selectors() {
        let d = toy(40, 4, &[], 4);
        assert_eq!(FullSelector.select(&d, 0).unwrap().support, vec![0, 1, 2, 3]);
        assert!(EmptySelector.select(&d, 0).unwrap().support.is_empty());
        let fixed = FixedSupport {
            support: vec![2, 0, 2],
            label: "Oracle".into(),
        };
        assert_eq!(fixed.select(&d, 0).unwrap().support, vec![0, 2]);
        let bad = FixedSupport {
            support: vec![4],
            label: "bad".into(),
        };
        assert!(matches!(bad.select(&d, 0), Err(Error::IndexOutOfRange { .. })));
    }
}
