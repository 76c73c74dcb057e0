use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use afdr_core::filter::serialize_threshold;
use afdr_core::pipeline::{KnockoffOutcome, Statistic};
use afdr_core::Variant;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Compute(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_file(path: PathBuf, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(&path, contents)
        .map_err(|e| CliError::Compute(format!("cannot write {}: {e}", path.display())))
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Compute(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn format_threshold(t: f64) -> String {
    if t.is_infinite() {
        "inf".into()
    } else {
        format!("{t:.6}")
    }
}

#[derive(Serialize)]
pub struct RunJson {
    pub seed: u64,
    pub q: f64,
    #[serde(serialize_with = "serialize_threshold")]
    pub threshold: f64,
    pub r_star: Option<f64>,
    /// 1-based.
    pub selected: Vec<usize>,
    pub w: Vec<f64>,
}

#[derive(Serialize)]
pub struct SelectionJson {
    pub method: String,
    pub statistic: Statistic,
    pub variant: Variant,
    pub q: f64,
    pub k: usize,
    #[serde(serialize_with = "serialize_threshold")]
    pub threshold: f64,
    /// 1-based.
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    pub runs: Vec<RunJson>,
}

impl SelectionJson {
    pub fn new(outcome: &KnockoffOutcome, statistic: Statistic, k: usize, names: &[String]) -> Self {
        let sel = &outcome.selection;
        Self {
            method: outcome.label.clone(),
            statistic,
            variant: sel.variant,
            q: sel.q,
            k,
            threshold: sel.threshold,
            selected: sel.selected.iter().map(|j| j + 1).collect(),
            selected_names: sel.selected.iter().map(|&j| names[j].clone()).collect(),
            runs: outcome
                .runs
                .iter()
                .map(|r| RunJson {
                    seed: r.seed,
                    q: r.selection.q,
                    threshold: r.selection.threshold,
                    r_star: r.r_star,
                    selected: r.selection.selected.iter().map(|j| j + 1).collect(),
                    w: r.statistics.w.clone(),
                })
                .collect(),
        }
    }
}

/// Human-readable selection summary with per-run W values.
pub fn selection_text(outcome: &KnockoffOutcome, names: &[String]) -> String {
    let sel = &outcome.selection;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} ({}, q = {}, k = {})",
        outcome.label,
        sel.variant,
        sel.q,
        outcome.runs.len()
    );
    let _ = writeln!(
        out,
        "{} variable{} selected, threshold {}",
        sel.selected.len(),
        if sel.selected.len() == 1 { "" } else { "s" },
        format_threshold(sel.threshold)
    );
    if !sel.selected.is_empty() {
        let listed: Vec<&str> = sel.selected.iter().map(|&j| names[j].as_str()).collect();
        let _ = writeln!(out, "selected: {}", listed.join(", "));
    }
    out.push('\n');
    let name_w = names.iter().map(|n| n.len()).max().unwrap_or(0).max(8);
    let _ = write!(out, "{:name_w$}", "variable");
    for (i, run) in outcome.runs.iter().enumerate() {
        let head = format!("W run {} (t={})", i + 1, format_threshold(run.selection.threshold));
        let _ = write!(out, "  {head:>24}");
    }
    out.push_str("  selected\n");
    for (j, name) in names.iter().enumerate() {
        let _ = write!(out, "{name:name_w$}");
        for run in &outcome.runs {
            let _ = write!(out, "  {:>24.6}", run.statistics.w[j]);
        }
        let mark = if sel.selected.contains(&j) { "*" } else { "" };
        let _ = writeln!(out, "  {mark:>8}");
    }
    out
}

/// One row of a stored prediction report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub model_size: usize,
    pub pred_error: f64,
    pub failed_folds: usize,
    pub fold_errors: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub folds: usize,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}
