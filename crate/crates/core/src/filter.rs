//! Knockoff statistics, knockoff / knockoff+ thresholds and aggregation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::glm::{LassoFit, LassoPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatisticKind {
    /// Lasso signed max: penalty level at which each variable enters.
    Lsm,
    /// Lasso coefficient difference at a calibrated penalty.
    Lcd,
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatisticKind::Lsm => f.write_str("LSM"),
            StatisticKind::Lcd => f.write_str("LCD"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Knockoff,
    #[default]
    KnockoffPlus,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Knockoff => f.write_str("knockoff"),
            Variant::KnockoffPlus => f.write_str("knockoff+"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knockoff" => Ok(Variant::Knockoff),
            "knockoff+" | "knockoff-plus" | "knockoff_plus" => Ok(Variant::KnockoffPlus),
            other => Err(Error::Invalid(format!("unknown variant {other:?}"))),
        }
    }
}

/// Antisymmetric per-variable statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WStatistics {
    pub w: Vec<f64>,
    pub kind: StatisticKind,
    pub z: Vec<f64>,
    pub z_tilde: Vec<f64>,
}

impl WStatistics {
    /// Statistics built directly from a `W` vector.
    pub fn from_w(w: Vec<f64>, kind: StatisticKind) -> Self {
        let p = w.len();
        Self {
            w,
            kind,
            z: vec![f64::NAN; p],
            z_tilde: vec![f64::NAN; p],
        }
    }

    pub fn p(&self) -> usize {
        self.w.len()
    }

    /// The statistics with original and knockoff roles exchanged.
    pub fn swapped(&self) -> Self {
        match self.kind {
            StatisticKind::Lsm => lsm_from_levels(self.z_tilde.clone(), self.z.clone()),
            StatisticKind::Lcd => lcd_from_magnitudes(self.z_tilde.clone(), self.z.clone()),
        }
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

fn lsm_from_levels(z: Vec<f64>, z_tilde: Vec<f64>) -> WStatistics {
    let w = z
        .iter()
        .zip(&z_tilde)
        .map(|(&a, &b)| a.max(b) * sign(a - b))
        .collect();
    WStatistics {
        w,
        kind: StatisticKind::Lsm,
        z,
        z_tilde,
    }
}

fn lcd_from_magnitudes(z: Vec<f64>, z_tilde: Vec<f64>) -> WStatistics {
    let w = z.iter().zip(&z_tilde).map(|(a, b)| a - b).collect();
    WStatistics {
        w,
        kind: StatisticKind::Lcd,
        z,
        z_tilde,
    }
}

fn split_blocks(len: usize) -> Result<usize> {
    if len == 0 || len % 2 != 0 {
        return Err(Error::Dimension(format!(
            "augmented fit must have an even number of coefficients, got {len}"
        )));
    }
    Ok(len / 2)
}

/// `W_j = max(Z_j, Z̃_j) · sign(Z_j − Z̃_j)` from the entry levels of a path
/// over `[X X̃]`.
pub fn lsm_statistics(path: &LassoPath) -> Result<WStatistics> {
    let p = split_blocks(path.entry_level.len())?;
    let z = path.entry_level[..p].to_vec();
    let z_tilde = path.entry_level[p..].to_vec();
    Ok(lsm_from_levels(z, z_tilde))
}

/// `W_j = |β_j| − |β_{p+j}|` from a fit over `[X X̃]`.
pub fn lcd_statistics(fit: &LassoFit) -> Result<WStatistics> {
    if !fit.converged {
        return Err(Error::NotConverged(format!(
            "LCD statistics need a converged fit (r = {:.3e})",
            fit.r
        )));
    }
    let p = split_blocks(fit.beta.len())?;
    let z = fit.beta[..p].iter().map(|b| b.abs()).collect();
    let z_tilde = fit.beta[p..].iter().map(|b| b.abs()).collect();
    Ok(lcd_from_magnitudes(z, z_tilde))
}

/// Provenance of one knockoff run inside a selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: Option<u64>,
    pub q: f64,
    #[serde(serialize_with = "serialize_threshold")]
    pub threshold: f64,
    pub selected: Vec<usize>,
}

/// Result of thresholding one or more knockoff runs.
///
/// For a single run `selected = {j : w_j ≥ threshold}`. For an aggregated
/// result `selected` is the union over `runs`, `q` is the sum of the run
/// levels and `threshold` is the smallest run threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub selected: Vec<usize>,
    #[serde(serialize_with = "serialize_threshold")]
    pub threshold: f64,
    pub q: f64,
    pub variant: Variant,
    pub p: usize,
    pub runs: Vec<RunRecord>,
}

impl SelectionResult {
    pub fn with_seed(mut self, seed: u64) -> Self {
        for run in &mut self.runs {
            run.seed = Some(seed);
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// `+∞` is written as the string `"inf"`; JSON has no infinity.
pub fn serialize_threshold<S: Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if t.is_finite() {
        s.serialize_f64(*t)
    } else if *t > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("nan")
    }
}

fn is_feasible(negatives: usize, positives: usize, q: f64, variant: Variant) -> bool {
    match variant {
        Variant::Knockoff => positives > 0 && (negatives as f64) / (positives as f64) <= q,
        Variant::KnockoffPlus => (1 + negatives) as f64 / positives.max(1) as f64 <= q,
    }
}

/// Data-dependent knockoff threshold.
///
/// Scans the nonzero magnitudes `|w_j|` in increasing order and returns the
/// first `t` whose estimated false discovery proportion
/// `#{w ≤ −t} / #{w ≥ t}` (knockoff) or `(1 + #{w ≤ −t}) / max(#{w ≥ t}, 1)`
/// (knockoff+) is at most `q`. Without a feasible `t` the threshold is
/// `+∞` and nothing is selected.
pub fn threshold(w: &WStatistics, q: f64, variant: Variant) -> Result<SelectionResult> {
    threshold_values(&w.w, q, variant)
}

pub fn threshold_values(w: &[f64], q: f64, variant: Variant) -> Result<SelectionResult> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Invalid(format!("target level must lie in [0, 1], got {q}")));
    }
    if w.iter().any(|v| v.is_nan()) {
        return Err(Error::Invalid("W statistics contain NaN".into()));
    }
    let mut positives: Vec<f64> = w.iter().copied().filter(|&v| v > 0.0).collect();
    let mut negatives: Vec<f64> = w.iter().filter(|&&v| v < 0.0).map(|v| -v).collect();
    positives.sort_by(f64::total_cmp);
    negatives.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = positives.iter().chain(&negatives).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // #{v ≥ t} over a sorted slice
    let at_least = |sorted: &[f64], t: f64| sorted.len() - sorted.partition_point(|&v| v < t);
    let t = candidates
        .into_iter()
        .find(|&t| is_feasible(at_least(&negatives, t), at_least(&positives, t), q, variant))
        .unwrap_or(f64::INFINITY);
    let selected: Vec<usize> = if t.is_finite() {
        (0..w.len()).filter(|&j| w[j] >= t).collect()
    } else {
        Vec::new()
    };
    Ok(SelectionResult {
        selected: selected.clone(),
        threshold: t,
        q,
        variant,
        p: w.len(),
        runs: vec![RunRecord {
            seed: None,
            q,
            threshold: t,
            selected,
        }],
    })
}

/// Union of `k` knockoff selections.
///
/// With one run the input is returned unchanged.
pub fn aggregate_afdr(runs: &[SelectionResult]) -> Result<SelectionResult> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Invalid("aggregation needs at least one run".into()))?;
    if runs.len() == 1 {
        return Ok(first.clone());
    }
    for run in &runs[1..] {
        if run.p != first.p {
            return Err(Error::Dimension(format!(
                "runs disagree on p ({} vs {})",
                first.p, run.p
            )));
        }
        if run.variant != first.variant {
            return Err(Error::Invalid(format!(
                "runs mix variants ({} vs {})",
                first.variant, run.variant
            )));
        }
    }
    let union: BTreeSet<usize> = runs.iter().flat_map(|r| r.selected.iter().copied()).collect();
    Ok(SelectionResult {
        selected: union.into_iter().collect(),
        threshold: runs.iter().map(|r| r.threshold).fold(f64::INFINITY, f64::min),
        q: runs.iter().map(|r| r.q).sum(),
        variant: first.variant,
        p: first.p,
        runs: runs.iter().flat_map(|r| r.runs.iter().cloned()).collect(),
    })
}

/// Uniform split of the target level over `k` runs.
pub fn split_level(q: f64, k: usize) -> Vec<f64> {
    vec![q / k as f64; k]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lsm_formula() {
        let w = lsm_from_levels(vec![0.7, 0.4, 0.2], vec![0.3, 0.4, 0.5]);
        assert_eq!(w.w, vec![0.7, 0.0, -0.5]);
    }

    #[test]
    fn lcd_with_mixed_signs() {
        let fit = LassoFit {
            r: 0.1,
            intercept: 0.0,
            beta: vec![0.5, 0.0, -0.2, 0.1, 0.3, 0.0],
            objective: 0.5,
            iterations: 1,
            converged: true,
            kkt_violation: 0.0,
            monotone: true,
        };
        let w = lcd_statistics(&fit).unwrap();
        let expected = [0.4, -0.3, 0.2];
        for (a, b) in w.w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let swapped = w.swapped();
        for (a, b) in swapped.w.iter().zip(&w.w) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn lcd_rejects_unconverged_and_odd_length() {
        let mut fit = LassoFit {
            r: 0.1,
            intercept: 0.0,
            beta: vec![0.0; 4],
            objective: 0.5,
            iterations: 1,
            converged: false,
            kkt_violation: 0.0,
            monotone: true,
        };
        assert!(lcd_statistics(&fit).is_err());
        fit.converged = true;
        assert!(lcd_statistics(&fit).unwrap().w.iter().all(|&v| v == 0.0));
        fit.beta.push(0.0);
        assert!(matches!(lcd_statistics(&fit), Err(Error::Dimension(_))));
    }

    #[test]
    fn knockoff_threshold_example() {
        let r = threshold_values(&[3.0, 2.0, -1.0, 5.0], 0.5, Variant::Knockoff).unwrap();
        assert_eq!(r.threshold, 1.0);
        assert_eq!(r.selected, vec![0, 1, 3]);
    }

    #[test]
    fn knockoff_plus_threshold_example() {
        let r = threshold_values(&[3.0, 2.0, -1.0, 5.0], 0.5, Variant::KnockoffPlus).unwrap();
        assert_eq!(r.threshold, 2.0);
        assert_eq!(r.selected, vec![0, 1, 3]);
    }

    #[test]
    fn all_negative_selects_nothing() {
        for q in [0.0, 0.1, 0.5, 1.0] {
            let r = threshold_values(&[-1.0, -2.0, -0.5], q, Variant::KnockoffPlus).unwrap();
            assert!(r.selected.is_empty());
            assert!(r.threshold.is_infinite());
        }
    }

    #[test]
    fn zeros_are_never_selected() {
        let r = threshold_values(&[0.0, 0.0, 4.0], 1.0, Variant::Knockoff).unwrap();
        assert_eq!(r.selected, vec![2]);
        let r = threshold_values(&[0.0; 5], 1.0, Variant::Knockoff).unwrap();
        assert!(r.selected.is_empty());
    }

    #[test]
    fn rejects_level_outside_unit_interval() {
        assert!(threshold_values(&[1.0], 1.5, Variant::Knockoff).is_err());
        assert!(threshold_values(&[1.0], -0.1, Variant::Knockoff).is_err());
    }

    #[test]
    fn union_of_runs() {
        let runs: Vec<SelectionResult> = [vec![0, 1], vec![1, 2], vec![]]
            .into_iter()
            .map(|sel| SelectionResult {
                selected: sel.clone(),
                threshold: 1.0,
                q: 0.1 / 3.0,
                variant: Variant::KnockoffPlus,
                p: 5,
                runs: vec![RunRecord {
                    seed: None,
                    q: 0.1 / 3.0,
                    threshold: 1.0,
                    selected: sel,
                }],
            })
            .collect();
        let agg = aggregate_afdr(&runs).unwrap();
        assert_eq!(agg.selected, vec![0, 1, 2]);
        assert_eq!(agg.runs.len(), 3);
        assert!((agg.q - 0.1).abs() < 1e-15);
        assert_eq!(aggregate_afdr(&runs[..1]).unwrap(), runs[0]);
    }

    #[test]
    fn aggregation_rejects_mismatch() {
        let a = threshold_values(&[1.0, 2.0], 0.5, Variant::Knockoff).unwrap();
        let b = threshold_values(&[1.0, 2.0, 3.0], 0.5, Variant::Knockoff).unwrap();
        let c = threshold_values(&[1.0, 2.0], 0.5, Variant::KnockoffPlus).unwrap();
        assert!(aggregate_afdr(&[a.clone(), b]).is_err());
        assert!(aggregate_afdr(&[a, c]).is_err());
        assert!(aggregate_afdr(&[]).is_err());
    }

    #[test]
    fn uniform_split() {
        let levels = split_level(0.1, 3);
        assert_eq!(levels.len(), 3);
        assert_eq!(levels[0], 1.0 / 30.0);
        assert!((levels.iter().sum::<f64>() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn infinite_threshold_serializes_as_string() {
        let r = threshold_values(&[-1.0], 0.1, Variant::KnockoffPlus).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"threshold\":\"inf\""), "{json}");
    }
}
