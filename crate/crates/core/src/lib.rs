//! Controlled variable selection for binary-outcome regression.
//!
//! The crate builds Gaussian model-X knockoff copies of a design matrix,
//! fits l1-penalized logistic regressions on the augmented design, turns
//! the fits into antisymmetric knockoff statistics (lasso signed max or
//! lasso coefficient difference) and applies the knockoff / knockoff+
//! thresholds. Several independent knockoff runs at levels summing to the
//! target can be aggregated by taking the union of their selections.
//!
//! Around that core sit unpenalized refits with standard errors and
//! marginal effects, cross-validated prediction error, and a Monte Carlo
//! harness that measures empirical FDR and power on synthetic data.

pub mod data;
pub mod error;
pub mod filter;
pub mod glm;
pub mod inference;
pub mod knockoffs;
pub mod pipeline;
pub mod seed;
pub mod sim;

pub use data::{make_folds, Dataset, FoldAssignment};
pub use error::{Error, Result};
pub use filter::{
    aggregate_afdr, lcd_statistics, lsm_statistics, threshold, SelectionResult, StatisticKind,
    Variant, WStatistics,
};
pub use glm::{
    cross_validate_lambda, fit_logistic_lasso, fit_path, lambda_max, LassoFit, LassoPath,
    SolverOptions,
};
pub use inference::{
    cv_prediction_error, marginal_effects, refit_logistic, refit_ols, PredictionReport,
    RefitEstimates, RefitKind, RefitScale,
};
pub use knockoffs::{KnockoffCopy, KnockoffModel};
pub use pipeline::{KnockoffConfig, KnockoffSelector, Selector};
pub use sim::{evaluate_selection, generate_synthetic, run_monte_carlo, MonteCarloReport, Scenario};
