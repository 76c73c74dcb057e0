//! Datasets, standardization, CSV ingestion and fold splits.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Design matrix with a binary response.
///
/// When `standardized` is set, each column of `x` has mean zero and sum of
/// squares `n`; `column_means` / `column_scales` hold the affine map back to
/// the raw values (`raw = x * scale + mean`). Unstandardized datasets carry
/// means 0 and scales 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    column_names: Vec<String>,
    standardized: bool,
    column_means: DVector<f64>,
    column_scales: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, column_names: Vec<String>) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 {
            return Err(Error::Invalid(format!("need at least 2 observations, got {n}")));
        }
        if p < 1 {
            return Err(Error::Invalid("need at least one column".into()));
        }
        if y.len() != n {
            return Err(Error::Dimension(format!("x has {n} rows but y has {}", y.len())));
        }
        if column_names.len() != p {
            return Err(Error::Dimension(format!(
                "x has {p} columns but {} names were given",
                column_names.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite entry at row {}, column {}",
                pos % n,
                pos / n
            )));
        }
        if let Some((row, v)) = y.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryResponse {
                row,
                value: v.to_string(),
            });
        }
        Ok(Self {
            x,
            y,
            column_names,
            standardized: false,
            column_means: DVector::zeros(p),
            column_scales: DVector::from_element(p, 1.0),
        })
    }

    /// Like [`Dataset::new`] with names `x1..xp`.
    pub fn from_matrix(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(x, y, names)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn column_means(&self) -> &DVector<f64> {
        &self.column_means
    }

    pub fn column_scales(&self) -> &DVector<f64> {
        &self.column_scales
    }

    pub fn response_mean(&self) -> f64 {
        self.y.mean()
    }

    /// Center every column and rescale it so its sum of squares equals `n`.
    pub fn standardize(&self) -> Result<Dataset> {
        if self.standardized {
            return Err(Error::Invalid("dataset is already standardized".into()));
        }
        let n = self.n() as f64;
        let mut x = self.x.clone();
        let mut means = DVector::zeros(self.p());
        let mut scales = DVector::zeros(self.p());
        for (j, mut col) in x.column_iter_mut().enumerate() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            let rms = (col.norm_squared() / n).sqrt();
            if !(rms > 1e-12 * (1.0 + mean.abs())) {
                return Err(Error::ConstantColumn(self.column_names[j].clone()));
            }
            col /= rms;
            means[j] = mean;
            scales[j] = rms;
        }
        Ok(Dataset {
            x,
            y: self.y.clone(),
            column_names: self.column_names.clone(),
            standardized: true,
            column_means: means,
            column_scales: scales,
        })
    }

    /// Raw-scale design, undoing any recorded standardization.
    pub fn raw_x(&self) -> DMatrix<f64> {
        let mut raw = self.x.clone();
        if self.standardized {
            for (j, mut col) in raw.column_iter_mut().enumerate() {
                col *= self.column_scales[j];
                col.add_scalar_mut(self.column_means[j]);
            }
        }
        raw
    }

    /// Raw-scale copy of the rows in `rows`, unstandardized.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let raw = self.raw_x();
        let x = raw.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Dataset::new(x, y, self.column_names.clone())
    }

    /// Apply `reference`'s standardization map to this (raw) dataset.
    ///
    /// Used to bring validation rows onto the scale of the training fold.
    pub fn standardize_like(&self, reference: &Dataset) -> Result<Dataset> {
        if self.standardized {
            return Err(Error::Invalid("dataset is already standardized".into()));
        }
        if reference.p() != self.p() {
            return Err(Error::Dimension("column counts differ".into()));
        }
        let mut x = self.x.clone();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.add_scalar_mut(-reference.column_means[j]);
            col /= reference.column_scales[j];
        }
        Ok(Dataset {
            x,
            y: self.y.clone(),
            column_names: self.column_names.clone(),
            standardized: true,
            column_means: reference.column_means.clone(),
            column_scales: reference.column_scales.clone(),
        })
    }

    /// Columns whose raw values are all 0 or 1.
    pub fn binary_columns(&self) -> Vec<bool> {
        let raw = self.raw_x();
        raw.column_iter()
            .map(|c| c.iter().all(|&v| (v - 0.0).abs() < 1e-9 || (v - 1.0).abs() < 1e-9))
            .collect()
    }

    /// Load a CSV file with a header row; every column other than
    /// `response_column` becomes a predictor, in header order.
    pub fn load_csv(path: impl AsRef<Path>, response_column: &str) -> Result<Dataset> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, response_column)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, response_column: &str) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let response_idx = headers
            .iter()
            .position(|h| h == response_column)
            .ok_or_else(|| Error::MissingResponse(response_column.to_string()))?;
        let names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != response_idx)
            .map(|(_, h)| h.clone())
            .collect();
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name) {
                return Err(Error::Invalid(format!("duplicate column name {name}")));
            }
        }

        let mut values: Vec<f64> = Vec::new();
        let mut y = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            // 1-based data row numbering, header excluded
            let row = row + 1;
            for (i, cell) in record.iter().enumerate() {
                let cell = cell.trim();
                if i == response_idx {
                    match cell {
                        "0" | "0.0" => y.push(0.0),
                        "1" | "1.0" => y.push(1.0),
                        _ => {
                            return Err(Error::NonBinaryResponse {
                                row,
                                value: cell.to_string(),
                            })
                        }
                    }
                } else {
                    let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                        row,
                        column: headers[i].clone(),
                        value: cell.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::NonNumeric {
                            row,
                            column: headers[i].clone(),
                            value: cell.to_string(),
                        });
                    }
                    values.push(v);
                }
            }
        }
        let n = y.len();
        let p = names.len();
        let x = DMatrix::from_row_slice(n, p, &values);
        for (j, col) in x.column_iter().enumerate() {
            if n > 0 && col.iter().all(|&v| v == col[0]) {
                return Err(Error::ConstantColumn(names[j].clone()));
            }
        }
        Dataset::new(x, DVector::from_vec(y), names)
    }

    /// Write the dataset's raw values with the response as the last column.
    pub fn write_csv<W: std::io::Write>(&self, writer: W, response_column: &str) -> Result<()> {
        let raw = self.raw_x();
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.column_names.iter().map(String::as_str).collect();
        header.push(response_column);
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = raw.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{}", self.y[i] as u8));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Assignment of observations to `k` folds (0-based fold ids).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn validation(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Deterministic K-fold split of `n` observations.
///
/// Observations are shuffled with `seed` and dealt to folds round robin.
/// With `stratify_by`, positives are dealt first and negatives continue the
/// same rotation, so both the fold sizes and the per-fold positive counts
/// differ by at most one.
pub fn make_folds(
    n: usize,
    k: usize,
    stratify_by: Option<&[f64]>,
    seed: u64,
) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Invalid(format!("fold count must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::Invalid(format!("fold count {k} exceeds n = {n}")));
    }
    let mut rng = seed::rng(seed);
    let order: Vec<usize> = match stratify_by {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx
        }
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::Dimension(format!(
                    "stratification vector has length {}, expected {n}",
                    labels.len()
                )));
            }
            let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| labels[i] == 1.0);
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            pos.extend(neg);
            pos
        }
    };
    let mut fold_of = vec![0; n];
    for (slot, &i) in order.iter().enumerate() {
        fold_of[i] = slot % k;
    }
    Ok(FoldAssignment { fold_of, k })
}
