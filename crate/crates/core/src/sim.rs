//! Synthetic sparse logistic designs and Monte Carlo evaluation of
//! selection procedures.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::filter::Variant;
use crate::glm::sigmoid;
use crate::pipeline::{FitDiagnostics, KnockoffConfig, KnockoffSelector, Selector, Statistic};
use crate::seed::{self, stream};

/// Covariance structure of the synthetic rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    Identity,
    /// Unit diagonal, `rho` elsewhere.
    Equicorrelated(f64),
    /// `rho^|i - j|`.
    Ar1(f64),
}

impl Correlation {
    pub fn rho(&self) -> f64 {
        match *self {
            Correlation::Identity => 0.0,
            Correlation::Equicorrelated(r) | Correlation::Ar1(r) => r,
        }
    }

    pub fn matrix(&self, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                return 1.0;
            }
            match *self {
                Correlation::Identity => 0.0,
                Correlation::Equicorrelated(r) => r,
                Correlation::Ar1(r) => r.powi(i.abs_diff(j) as i32),
            }
        })
    }
}

impl fmt::Display for Correlation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Correlation::Identity => f.write_str("identity"),
            Correlation::Equicorrelated(r) => write!(f, "equicorrelated({r})"),
            Correlation::Ar1(r) => write!(f, "ar1({r})"),
        }
    }
}

impl FromStr for Correlation {
    type Err = Error;

    /// `identity`, `equicorrelated(0.3)` or `ar1(0.5)`; `name:rho` also works.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "identity" {
            return Ok(Correlation::Identity);
        }
        let (name, arg) = s
            .split_once('(')
            .map(|(n, rest)| (n, rest.trim_end_matches(')')))
            .or_else(|| s.split_once(':'))
            .ok_or_else(|| Error::Invalid(format!("unknown correlation {s:?}")))?;
        let rho: f64 = arg
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("bad correlation parameter {arg:?}")))?;
        match name.trim() {
            "equicorrelated" | "equi" => Ok(Correlation::Equicorrelated(rho)),
            "ar1" => Ok(Correlation::Ar1(rho)),
            other => Err(Error::Invalid(format!("unknown correlation {other:?}"))),
        }
    }
}

impl Serialize for Correlation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub n: usize,
    pub p: usize,
    pub s0: usize,
    pub amplitude: f64,
    pub correlation: Correlation,
    pub q: f64,
    pub k: usize,
    pub variant: Variant,
    pub statistic: Statistic,
    pub replicates: usize,
    pub base_seed: u64,
    pub grid_size: usize,
    pub min_ratio: f64,
    pub cv_folds: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        let kc = KnockoffConfig::default();
        Self {
            n: 500,
            p: 50,
            s0: 10,
            amplitude: 10.0,
            correlation: Correlation::Identity,
            q: kc.q,
            k: kc.k,
            variant: kc.variant,
            statistic: kc.statistic,
            replicates: 100,
            base_seed: 1,
            grid_size: kc.grid_size,
            min_ratio: kc.min_ratio,
            cv_folds: kc.cv_folds,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Invalid(format!("bad value {value:?} for {key}")))
}

impl Scenario {
    /// Parse `key = value` lines; `#` starts a comment. Missing keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sc = Scenario::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Invalid(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "n" => sc.n = parse_value(key, value)?,
                "p" => sc.p = parse_value(key, value)?,
                "s0" => sc.s0 = parse_value(key, value)?,
                "amplitude" => sc.amplitude = parse_value(key, value)?,
                "correlation" => sc.correlation = value.parse()?,
                "q" => sc.q = parse_value(key, value)?,
                "k" => sc.k = parse_value(key, value)?,
                "variant" => sc.variant = value.parse()?,
                "statistic" => sc.statistic = value.parse()?,
                "replicates" | "R" => sc.replicates = parse_value(key, value)?,
                "base_seed" | "seed" => sc.base_seed = parse_value(key, value)?,
                "grid_size" => sc.grid_size = parse_value(key, value)?,
                "min_ratio" => sc.min_ratio = parse_value(key, value)?,
                "cv_folds" => sc.cv_folds = parse_value(key, value)?,
                other => {
                    return Err(Error::Invalid(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 1 {
            return Err(Error::Invalid("need n >= 2 and p >= 1".into()));
        }
        if self.s0 > self.p {
            return Err(Error::Invalid(format!("s0 = {} exceeds p = {}", self.s0, self.p)));
        }
        let rho = self.correlation.rho();
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Invalid(format!("rho must lie in [0, 1), got {rho}")));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::Invalid("amplitude must be finite and nonnegative".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Invalid("need at least one replicate".into()));
        }
        self.knockoff_config().validate()
    }

    pub fn knockoff_config(&self) -> KnockoffConfig {
        KnockoffConfig {
            statistic: self.statistic,
            q: self.q,
            k: self.k,
            variant: self.variant,
            grid_size: self.grid_size,
            min_ratio: self.min_ratio,
            cv_folds: self.cv_folds,
            ..KnockoffConfig::default()
        }
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        seed::derive(seed::derive(self.base_seed, stream::REPLICATE), replicate as u64)
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// 0-based, sorted.
    pub true_support: Vec<usize>,
    pub beta_star: Vec<f64>,
}

fn draw_response(x: &DMatrix<f64>, beta: &[f64], seed: u64) -> DVector<f64> {
    let mut rng = seed::rng(seed);
    let eta = x * DVector::from_column_slice(beta);
    eta.map(|e| f64::from(rng.random::<f64>() < sigmoid(e)))
}

fn degenerate(y: &DVector<f64>) -> bool {
    let m = y.mean();
    m == 0.0 || m == 1.0
}

/// Replicate `replicate` of the scenario: Gaussian rows, standardized
/// columns, `s0` coefficients of magnitude `amplitude` with random signs,
/// logistic responses.
pub fn generate_synthetic(sc: &Scenario, replicate: usize) -> Result<Synthetic> {
    sc.validate()?;
    let rep_seed = sc.replicate_seed(replicate);
    let (n, p) = (sc.n, sc.p);
    let sigma = sc.correlation.matrix(p);
    let l = sigma
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("scenario covariance".into()))?
        .l();
    let design_seed = seed::derive(rep_seed, stream::DESIGN);
    let mut z = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        let mut rng = seed::row_rng(design_seed, i as u64);
        for j in 0..p {
            z[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let x = z * l.transpose();

    let mut support_rng = seed::rng(seed::derive(rep_seed, stream::SUPPORT));
    let mut true_support = index::sample(&mut support_rng, p, sc.s0).into_vec();
    true_support.sort_unstable();
    let mut beta_star = vec![0.0; p];
    for &j in &true_support {
        beta_star[j] = if support_rng.random::<bool>() {
            sc.amplitude
        } else {
            -sc.amplitude
        };
    }

    let names: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    let placeholder = DVector::from_fn(n, |i, _| (i % 2) as f64);
    let standardized = Dataset::new(x, placeholder, names.clone())?.standardize()?;
    let response_seed = seed::derive(rep_seed, stream::RESPONSE);
    let mut y = draw_response(standardized.x(), &beta_star, response_seed);
    if degenerate(&y) {
        y = draw_response(standardized.x(), &beta_star, seed::derive(response_seed, 1));
        if degenerate(&y) {
            return Err(Error::DegenerateResponse(y[0] as u8));
        }
    }
    let dataset = Dataset::new(standardized.x().clone(), y, names)?.standardize()?;
    Ok(Synthetic {
        dataset,
        true_support,
        beta_star,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectionMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub hd: usize,
    pub fdp: f64,
    /// `tp / |true|`, or 0 when the true support is empty.
    pub power: f64,
    pub power_defined: bool,
    pub size: usize,
}

/// False discovery proportion, power and Hamming distance of a selection.
pub fn evaluate_selection(selected: &[usize], true_support: &[usize]) -> SelectionMetrics {
    let sel: BTreeSet<usize> = selected.iter().copied().collect();
    let truth: BTreeSet<usize> = true_support.iter().copied().collect();
    let tp = sel.intersection(&truth).count();
    let fp = sel.len() - tp;
    let fn_ = truth.len() - tp;
    SelectionMetrics {
        tp,
        fp,
        fn_,
        hd: fp + fn_,
        fdp: fp as f64 / sel.len().max(1) as f64,
        power: if truth.is_empty() {
            0.0
        } else {
            tp as f64 / truth.len() as f64
        },
        power_defined: !truth.is_empty(),
        size: sel.len(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub metrics: Option<SelectionMetrics>,
    pub selected: Vec<usize>,
    pub diagnostics: FitDiagnostics,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloSummary {
    pub method: String,
    pub replicates: usize,
    pub failed: usize,
    pub mean_fdp: f64,
    pub se_fdp: f64,
    pub mean_power: f64,
    pub se_power: f64,
    pub mean_hd: f64,
    pub mean_size: f64,
    pub median_size: f64,
    pub unconverged_fits: usize,
    pub max_kkt_violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub scenario: Scenario,
    pub summary: MonteCarloSummary,
    pub records: Vec<ReplicateRecord>,
    #[serde(skip)]
    pub runtime: Duration,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

impl MonteCarloReport {
    /// Aggregate replicate records; fails when more than 5% failed.
    pub fn from_records(
        scenario: Scenario,
        method: String,
        records: Vec<ReplicateRecord>,
        runtime: Duration,
    ) -> Result<Self> {
        let total = records.len();
        let ok: Vec<&SelectionMetrics> = records.iter().filter_map(|r| r.metrics.as_ref()).collect();
        let failed = total - ok.len();
        if failed * 20 > total || ok.is_empty() {
            return Err(Error::TooManyFailures { failed, total });
        }
        let fdp: Vec<f64> = ok.iter().map(|m| m.fdp).collect();
        let power: Vec<f64> = ok.iter().map(|m| m.power).collect();
        let hd: Vec<f64> = ok.iter().map(|m| m.hd as f64).collect();
        let mut size: Vec<f64> = ok.iter().map(|m| m.size as f64).collect();
        let (mean_fdp, se_fdp) = mean_se(&fdp);
        let (mean_power, se_power) = mean_se(&power);
        let mut diag = FitDiagnostics::default();
        for r in &records {
            diag.merge(&r.diagnostics);
        }
        let summary = MonteCarloSummary {
            method,
            replicates: total,
            failed,
            mean_fdp,
            se_fdp,
            mean_power,
            se_power,
            mean_hd: mean_se(&hd).0,
            mean_size: mean_se(&size).0,
            median_size: median(&mut size),
            unconverged_fits: diag.unconverged,
            max_kkt_violation: diag.max_kkt_violation,
        };
        Ok(Self {
            scenario,
            summary,
            records,
            runtime,
        })
    }

    pub fn write_replicates_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "replicate", "seed", "size", "tp", "fp", "fn", "hd", "fdp", "power", "status",
        ])?;
        for r in &self.records {
            let mut row = vec![r.replicate.to_string(), r.seed.to_string()];
            match &r.metrics {
                Some(m) => {
                    row.extend([
                        m.size.to_string(),
                        m.tp.to_string(),
                        m.fp.to_string(),
                        m.fn_.to_string(),
                        m.hd.to_string(),
                        format!("{:?}", m.fdp),
                        format!("{:?}", m.power),
                        "ok".to_string(),
                    ]);
                }
                None => {
                    row.extend(std::iter::repeat_n(String::new(), 7));
                    row.push(r.error.clone().unwrap_or_default());
                }
            }
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Scenario and summary; runtime is left out so reruns are identical.
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            scenario: &'a Scenario,
            summary: &'a MonteCarloSummary,
        }
        serde_json::to_string_pretty(&Out {
            scenario: &self.scenario,
            summary: &self.summary,
        })
        .map_err(|e| Error::Invalid(format!("serialization failed: {e}")))
    }
}

/// Run `selector` on every replicate of the scenario.
///
/// Replicates run in parallel; records are kept in replicate order.
pub fn run_monte_carlo_with(sc: &Scenario, selector: &dyn Selector) -> Result<MonteCarloReport> {
    sc.validate()?;
    let start = Instant::now();
    let records: Vec<ReplicateRecord> = (0..sc.replicates)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = sc.replicate_seed(rep);
            let outcome = generate_synthetic(sc, rep).and_then(|syn| {
                let sel = selector.select(&syn.dataset, seed::derive(rep_seed, stream::KNOCKOFF))?;
                Ok((evaluate_selection(&sel.support, &syn.true_support), sel))
            });
            match outcome {
                Ok((metrics, sel)) => ReplicateRecord {
                    replicate: rep,
                    seed: rep_seed,
                    metrics: Some(metrics),
                    selected: sel.support,
                    diagnostics: sel.diagnostics,
                    error: None,
                },
                Err(e) => {
                    log::warn!("replicate {rep} failed: {e}");
                    ReplicateRecord {
                        replicate: rep,
                        seed: rep_seed,
                        metrics: None,
                        selected: Vec::new(),
                        diagnostics: FitDiagnostics::default(),
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    MonteCarloReport::from_records(sc.clone(), selector.label(), records, start.elapsed())
}

/// Monte Carlo run of the scenario's knockoff procedure.
pub fn run_monte_carlo(sc: &Scenario) -> Result<MonteCarloReport> {
    let selector = KnockoffSelector::new(sc.knockoff_config())?;
    run_monte_carlo_with(sc, &selector)
}
