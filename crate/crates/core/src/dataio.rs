//! Dense classification datasets: LIBSVM / CSV parsing, seeded train/validation
//! splits and per-feature standardisation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Columns whose standard deviation falls below this are only centred.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Features and raw (unmapped) labels as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawData {
    pub features: Array2<f64>,
    pub labels: Vec<i64>,
}

/// A dense labelled dataset with class indices in `[0, c)`.
///
/// `label_values[k]` is the raw label that class `k` stands for; parsers build
/// it from the sorted distinct raw labels, so `{-1, +1}` becomes `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    label_values: Vec<i64>,
}

impl Dataset {
    /// Builds a dataset whose raw labels are the class indices themselves.
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        Self::with_label_values(features, labels, (0..n_classes as i64).collect())
    }

    pub fn with_label_values(
        features: Array2<f64>,
        labels: Vec<usize>,
        label_values: Vec<i64>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        if features.ncols() == 0 {
            return Err(Error::Dimension("dataset has no features".into()));
        }
        if label_values.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                label_values.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= label_values.len()) {
            return Err(Error::Label(bad));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "features contain NaN or infinite values".into(),
            ));
        }
        Ok(Self {
            features,
            labels,
            label_values,
        })
    }

    /// Maps raw labels to classes by sorted distinct value.
    pub fn from_raw(raw: RawData) -> Result<Self> {
        let values: Vec<i64> = raw
            .labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Self::from_raw_with_labels(raw, &values)
    }

    /// Maps raw labels through a known label set (e.g. one stored in a model).
    pub fn from_raw_with_labels(raw: RawData, label_values: &[i64]) -> Result<Self> {
        let labels = raw
            .labels
            .iter()
            .map(|v| {
                label_values.binary_search(v).map_err(|_| {
                    Error::Config(format!(
                        "label {v} is not one of the known labels {label_values:?}"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_label_values(raw.features, labels, label_values.to_vec())
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn c(&self) -> usize {
        self.label_values.len()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_values(&self) -> &[i64] {
        &self.label_values
    }

    pub fn raw_labels(&self) -> Vec<i64> {
        self.labels.iter().map(|&y| self.label_values[y]).collect()
    }

    /// Rows `idx` in the given order; keeps `c`, `d` and the label map.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            label_values: self.label_values.clone(),
        }
    }

    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        Self::with_label_values(features, self.labels.clone(), self.label_values.clone())
    }
}

fn parse_raw_label(tok: &str, line: usize) -> Result<i64> {
    if let Ok(v) = tok.parse::<i64>() {
        return Ok(v);
    }
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => Err(Error::Parse {
            line,
            msg: format!("label `{tok}` is not an integer"),
        }),
    }
}

fn parse_value(tok: &str, line: usize) -> Result<f64> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::Parse {
            line,
            msg: format!("non-finite value `{tok}`"),
        }),
        Err(_) => Err(Error::Parse {
            line,
            msg: format!("`{tok}` is not a number"),
        }),
    }
}

/// Reads `<label> <index>:<value> ...` lines (1-based ascending indices,
/// `#` starts a comment) into dense rows. Absent entries are zero and the
/// width is `max(d_hint, largest index seen)`.
pub fn parse_libsvm_raw(text: &str, d_hint: Option<usize>) -> Result<RawData> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = d_hint.unwrap_or(0);

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = parse_raw_label(tokens.next().unwrap_or(""), line_no)?;
        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected <index>:<value>, found `{tok}`"),
            })?;
            if idx == "qid" {
                continue;
            }
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad feature index `{idx}`"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "feature indices are 1-based".into(),
                });
            }
            if idx <= last {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("feature index {idx} does not follow {last} in ascending order"),
                });
            }
            last = idx;
            entries.push((idx - 1, parse_value(val, line_no)?));
        }
        width = width.max(last);
        rows.push(entries);
        labels.push(label);
    }

    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    if width == 0 {
        return Err(Error::Dimension("no feature columns found".into()));
    }
    let mut features = Array2::zeros((rows.len(), width));
    for (i, entries) in rows.iter().enumerate() {
        for &(j, v) in entries {
            features[[i, j]] = v;
        }
    }
    Ok(RawData { features, labels })
}

pub fn parse_libsvm(text: &str, d_hint: Option<usize>) -> Result<Dataset> {
    Dataset::from_raw(parse_libsvm_raw(text, d_hint)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelColumn {
    First,
    Last,
}

/// Comma-separated numeric rows without quoting. A first row containing any
/// non-numeric cell is taken as a header and skipped.
pub fn parse_csv_raw(text: &str, label_column: LabelColumn) -> Result<RawData> {
    let mut cells: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut first_content = true;

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if first_content {
            first_content = false;
            if fields.iter().any(|f| f.parse::<f64>().is_err()) {
                continue;
            }
        }
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: "need a label column and at least one feature".into(),
            });
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("ragged rows: expected {w} columns, found {}", fields.len()),
                })
            }
            _ => {}
        }
        let (label_tok, feats) = match label_column {
            LabelColumn::First => (fields[0], &fields[1..]),
            LabelColumn::Last => (fields[fields.len() - 1], &fields[..fields.len() - 1]),
        };
        labels.push(parse_raw_label(label_tok, line_no)?);
        for f in feats {
            cells.push(parse_value(f, line_no)?);
        }
    }

    let width = width.ok_or(Error::EmptyInput)?;
    let features = Array2::from_shape_vec((labels.len(), width - 1), cells)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    Ok(RawData { features, labels })
}

pub fn parse_csv(text: &str, label_column: LabelColumn) -> Result<Dataset> {
    Dataset::from_raw(parse_csv_raw(text, label_column)?)
}

/// LIBSVM text for `ds` using raw labels; zero entries are omitted and values
/// are printed in shortest round-trip form.
pub fn write_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    for (row, &y) in ds.features.rows().into_iter().zip(&ds.labels) {
        write!(out, "{}", ds.label_values[y]).unwrap();
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", j + 1, v).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub valid_fraction: f64,
    pub seed: u64,
}

/// Partitions `ds` by a seeded Fisher-Yates permutation: the first
/// `round(n * valid_fraction)` permuted indices form the validation part.
/// Returns `None` for the validation part when `valid_fraction == 0`.
pub fn split_train_valid(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Option<Dataset>)> {
    if !(0.0..1.0).contains(&spec.valid_fraction) {
        return Err(Error::Config(format!(
            "valid_fraction {} not in [0, 1)",
            spec.valid_fraction
        )));
    }
    if spec.valid_fraction == 0.0 {
        return Ok((ds.clone(), None));
    }
    let n = ds.n();
    let n_valid = (n as f64 * spec.valid_fraction).round() as usize;
    if n_valid == 0 || n_valid >= n {
        return Err(Error::Config(format!(
            "split of {n} samples at fraction {} leaves an empty part",
            spec.valid_fraction
        )));
    }
    let perm = SplitMix64::new(spec.seed).permutation(n);
    let (valid_idx, train_idx) = perm.split_at(n_valid);
    Ok((ds.subset(train_idx), Some(ds.subset(valid_idx))))
}

/// Per-feature centring and scaling fitted on one dataset and reapplicable
/// to others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation per column. Columns with
    /// deviation below [`SCALE_FLOOR`] get scale 1 (centred only).
    pub fn fit(features: ArrayView2<f64>) -> Self {
        let n = features.nrows() as f64;
        let mean = features.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(features.ncols());
        for row in features.rows() {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var.mapv(|v| {
            let sd = (v / n).sqrt();
            if sd < SCALE_FLOOR {
                1.0
            } else {
                sd
            }
        });
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, features: ArrayView2<f64>) -> Array2<f64> {
        let mut out = features.to_owned();
        for mut row in out.rows_mut() {
            self.transform_in_place(row.view_mut());
        }
        out
    }

    pub fn transform_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut out = x.to_owned();
        self.transform_in_place(out.view_mut());
        out
    }

    fn transform_in_place(&self, mut x: ndarray::ArrayViewMut1<f64>) {
        for ((v, &m), &s) in x.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
    }
}

pub fn standardize(ds: &Dataset) -> Result<(Standardizer, Dataset)> {
    let st = Standardizer::fit(ds.features());
    let out = ds.with_features(st.transform(ds.features()))?;
    Ok((st, out))
}
