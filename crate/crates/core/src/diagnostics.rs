//! Margins and the exactly verifiable inequalities relating the functional
//! gradient norm of the logistic risk to the margin distribution, the risk
//! itself and the conditional label distribution. Also learning-curve output.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::boost::{ResFGBModel, RoundRecord, TrainHistory};
use crate::dataio::Dataset;
use crate::embed::FeatureMap;
use crate::error::{Error, Result};
use crate::loss::{grad_norm_l1, mean_loss, LossKind};

/// Tolerance absorbing floating-point summation error in the bound checks.
pub const BOUND_SLACK: f64 = 1e-9;

pub const HISTORY_HEADER: &str =
    "round,train_risk,grad_norm_l1,train_acc,valid_acc,embed_mse,K,sigma_min,wall_ms";

/// Decimal with 17 significant digits; parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub slack: f64,
}

impl BoundReport {
    pub fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            holds: lhs <= rhs + BOUND_SLACK,
            slack: rhs - lhs,
        }
    }
}

impl fmt::Display for BoundReport {
    /// `name lhs rhs holds slack`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.name,
            format_f64(self.lhs),
            format_f64(self.rhs),
            self.holds,
            format_f64(self.slack)
        )
    }
}

pub fn reports_json(reports: &[BoundReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginStats {
    pub margins: Vec<f64>,
    pub delta: f64,
    pub fraction_below: f64,
}

/// `ζ_y − max_{y'≠y} ζ_{y'}`.
pub fn margin(logits: &[f64], y: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::Dimension("margins need at least two classes".into()));
    }
    if y >= logits.len() {
        return Err(Error::Label(y));
    }
    let other = logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(logits[y] - other)
}

pub fn margins(logits: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<f64>> {
    check_rows(logits, labels)?;
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(r, &y)| margin(&r.to_vec(), y))
        .collect()
}

/// Fraction of margins `≤ delta`.
pub fn fraction_below(margins: &[f64], delta: f64) -> f64 {
    margins.iter().filter(|&&m| m <= delta).count() as f64 / margins.len() as f64
}

pub fn margin_stats(logits: ArrayView2<f64>, labels: &[usize], delta: f64) -> Result<MarginStats> {
    let margins = margins(logits, labels)?;
    let fraction_below = fraction_below(&margins, delta);
    Ok(MarginStats {
        margins,
        delta,
        fraction_below,
    })
}

pub fn margin_distribution<M: FeatureMap + Clone>(
    model: &ResFGBModel<M>,
    ds: &Dataset,
    delta: f64,
) -> Result<MarginStats> {
    let logits = model.predict_logits_batch(ds.features())?;
    margin_stats(logits.view(), ds.labels(), delta)
}

fn check_rows(logits: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows vs {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

fn require_logistic(kind: LossKind) -> Result<()> {
    match kind {
        LossKind::Logistic => Ok(()),
        other => Err(Error::Config(format!(
            "this bound is stated for the logistic loss, not {}",
            other.name()
        ))),
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Label frequencies among samples whose feature rows are bit-identical.
fn conditional_labels(features: ArrayView2<f64>, labels: &[usize], c: usize) -> Vec<Vec<f64>> {
    let keys: Vec<Vec<u64>> = features
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    let mut counts: HashMap<&[u64], Vec<f64>> = HashMap::new();
    for (key, &y) in keys.iter().zip(labels) {
        counts.entry(key.as_slice()).or_insert_with(|| vec![0.0; c])[y] += 1.0;
    }
    keys.iter()
        .map(|key| {
            let cnt = &counts[key.as_slice()];
            let total: f64 = cnt.iter().sum();
            cnt.iter().map(|v| v / total).collect()
        })
        .collect()
}

/// `(1/√c) Σ_y ‖ν_n(y|·) − p_f(y|·)‖_{L₁} ≤ ‖∇_f L_n(f)‖_{L₁}`, where the
/// functional gradient at `x` is `p_f(·|x) − ν_n(·|x)` and `ν_n(·|x)` groups
/// identical feature rows.
pub fn consistency_bound(
    kind: LossKind,
    logits: ArrayView2<f64>,
    features: ArrayView2<f64>,
    labels: &[usize],
) -> Result<BoundReport> {
    require_logistic(kind)?;
    check_rows(logits, labels)?;
    if features.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    let c = logits.ncols();
    let nu = conditional_labels(features, labels, c);
    let n = labels.len() as f64;
    let (mut l1, mut l2) = (0.0, 0.0);
    for (row, cond) in logits.rows().into_iter().zip(&nu) {
        let p = softmax(&row.to_vec());
        let diff: Vec<f64> = p.iter().zip(cond).map(|(a, b)| a - b).collect();
        l1 += diff.iter().map(|v| v.abs()).sum::<f64>();
        l2 += diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    Ok(BoundReport::new(
        "consistency",
        l1 / (n * (c as f64).sqrt()),
        l2 / n,
    ))
}

/// `P_n[m_f ≤ δ] ≤ (1 + e^δ) √c ‖∇_f L_n(f)‖_{L₁}`.
pub fn margin_bound(
    kind: LossKind,
    logits: ArrayView2<f64>,
    labels: &[usize],
    delta: f64,
) -> Result<BoundReport> {
    require_logistic(kind)?;
    if !(delta >= 0.0) {
        return Err(Error::Config(format!(
            "margin threshold must be non-negative, got {delta}"
        )));
    }
    let below = fraction_below(&margins(logits, labels)?, delta);
    let g = grad_norm_l1(kind, logits, labels)?;
    let rhs = (1.0 + delta.exp()) * (logits.ncols() as f64).sqrt() * g;
    Ok(BoundReport::new(&format!("margin@{delta}"), below, rhs))
}

/// `(1 − e^{−M}) / (√c M) · L_n(f) ≤ ‖∇_f L_n(f)‖_{L₁}` with `M` the largest
/// per-sample loss.
pub fn risk_gap_bound(
    kind: LossKind,
    logits: ArrayView2<f64>,
    labels: &[usize],
) -> Result<BoundReport> {
    require_logistic(kind)?;
    check_rows(logits, labels)?;
    let mut max_loss: f64 = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        max_loss = max_loss.max(kind.value(&row.to_vec(), y)?);
    }
    // (1 − e^{−M}) / M, which tends to 1 as M → 0.
    let factor = if max_loss > 0.0 {
        -(-max_loss).exp_m1() / max_loss
    } else {
        1.0
    };
    let risk = mean_loss(kind, logits, labels)?;
    let lhs = factor / (logits.ncols() as f64).sqrt() * risk;
    Ok(BoundReport::new(
        "risk_gap",
        lhs,
        grad_norm_l1(kind, logits, labels)?,
    ))
}

pub fn check_consistency_bound<M: FeatureMap + Clone>(
    model: &ResFGBModel<M>,
    ds: &Dataset,
) -> Result<BoundReport> {
    let logits = model.predict_logits_batch(ds.features())?;
    consistency_bound(model.loss, logits.view(), ds.features(), ds.labels())
}

pub fn check_margin_bound<M: FeatureMap + Clone>(
    model: &ResFGBModel<M>,
    ds: &Dataset,
    delta: f64,
) -> Result<BoundReport> {
    let logits = model.predict_logits_batch(ds.features())?;
    margin_bound(model.loss, logits.view(), ds.labels(), delta)
}

pub fn check_risk_gap_bound<M: FeatureMap + Clone>(
    model: &ResFGBModel<M>,
    ds: &Dataset,
) -> Result<BoundReport> {
    let logits = model.predict_logits_batch(ds.features())?;
    risk_gap_bound(model.loss, logits.view(), ds.labels())
}

/// The consistency, risk-gap and margin checks at each `delta`.
pub fn all_bounds(
    kind: LossKind,
    logits: ArrayView2<f64>,
    features: ArrayView2<f64>,
    labels: &[usize],
    deltas: &[f64],
) -> Result<Vec<BoundReport>> {
    let mut out = vec![
        consistency_bound(kind, logits, features, labels)?,
        risk_gap_bound(kind, logits, labels)?,
    ];
    for &d in deltas {
        out.push(margin_bound(kind, logits, labels, d)?);
    }
    Ok(out)
}

/// One line of the learning-curve file.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub round: usize,
    pub train_risk: f64,
    pub grad_norm_l1: f64,
    pub train_acc: f64,
    pub valid_acc: Option<f64>,
    pub embed_mse: Option<f64>,
    pub k: Option<f64>,
    pub sigma_min: f64,
    pub wall_ms: f64,
}

impl From<&RoundRecord> for HistoryRow {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            train_risk: r.train_risk,
            grad_norm_l1: r.grad_norm_l1,
            train_acc: r.train_acc,
            valid_acc: r.valid_acc,
            embed_mse: r.embed_mse,
            k: r.k,
            sigma_min: r.sigma_min,
            wall_ms: r.wall_ms,
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

pub fn history_csv(history: &TrainHistory) -> Result<String> {
    if history.records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in &history.records {
        let fields = [
            r.round.to_string(),
            format_f64(r.train_risk),
            format_f64(r.grad_norm_l1),
            format_f64(r.train_acc),
            opt(r.valid_acc),
            opt(r.embed_mse),
            opt(r.k),
            format_f64(r.sigma_min),
            format_f64(r.wall_ms),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn emit_history(history: &TrainHistory, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, history_csv(history)?)?;
    Ok(())
}

pub fn parse_history_csv(text: &str) -> Result<Vec<HistoryRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: "unexpected history header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let err = |msg: String| Error::Parse { line: i + 2, msg };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 9 {
            return Err(err(format!("expected 9 fields, found {}", cells.len())));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| err(format!("bad number {s:?}: {e}")))
        };
        let opt_num = |s: &str| {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        rows.push(HistoryRow {
            round: cells[0]
                .trim()
                .parse()
                .map_err(|e| err(format!("bad round {:?}: {e}", cells[0])))?,
            train_risk: num(cells[1])?,
            grad_norm_l1: num(cells[2])?,
            train_acc: num(cells[3])?,
            valid_acc: opt_num(cells[4])?,
            embed_mse: opt_num(cells[5])?,
            k: opt_num(cells[6])?,
            sigma_min: num(cells[7])?,
            wall_ms: num(cells[8])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use ndarray::{array, Array2};

    const LOG: LossKind = LossKind::Logistic;

    #[test]
    fn margin_examples() {
        assert_eq!(margin(&[2.0, 0.5, -1.0], 0).unwrap(), 1.5);
        assert_eq!(margin(&[0.0, 0.0, 0.0], 2).unwrap(), 0.0);
        assert!(margin(&[2.0, 1.0], 1).unwrap() < 0.0);
        assert!(matches!(margin(&[1.0, 2.0], 2), Err(Error::Label(2))));
    }

    #[test]
    fn zero_model_margin_fractions() {
        let z = Array2::zeros((4, 3));
        let y = [0, 1, 2, 0];
        assert_eq!(margin_stats(z.view(), &y, 0.0).unwrap().fraction_below, 1.0);
        assert_eq!(
            margin_stats(z.view(), &y, -0.1).unwrap().fraction_below,
            0.0
        );
    }

    #[test]
    fn fraction_matches_counting_loop() {
        let mut rng = SplitMix64::new(4);
        let z = Array2::from_shape_simple_fn((30, 4), || rng.uniform(-3.0, 3.0));
        let y: Vec<usize> = (0..30).map(|_| rng.below(4) as usize).collect();
        for delta in [-1.0, 0.0, 0.3, 2.0] {
            let mut count = 0;
            for i in 0..30 {
                let own = z[[i, y[i]]];
                let other = (0..4)
                    .filter(|&k| k != y[i])
                    .map(|k| z[[i, k]])
                    .fold(f64::MIN, f64::max);
                if own - other <= delta {
                    count += 1;
                }
            }
            assert_eq!(
                margin_stats(z.view(), &y, delta).unwrap().fraction_below,
                count as f64 / 30.0
            );
        }
    }

    #[test]
    fn zero_model_bound_arithmetic() {
        let z = Array2::zeros((2, 2));
        let x = array![[1.0], [2.0]];
        let y = [0, 1];
        let cons = consistency_bound(LOG, z.view(), x.view(), &y).unwrap();
        assert!(
            (cons.lhs - 0.5f64.sqrt()).abs() < 1e-15 && (cons.rhs - 0.5f64.sqrt()).abs() < 1e-15
        );
        assert!(cons.holds);
        let m = margin_bound(LOG, z.view(), &y, 0.0).unwrap();
        assert_eq!(m.lhs, 1.0);
        assert!((m.rhs - 2.0).abs() < 1e-15);
        let r = risk_gap_bound(LOG, z.view(), &y).unwrap();
        assert!((r.rhs - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((r.lhs - 0.5 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn confident_model_bounds_vanish() {
        let z = array![[60.0, 0.0], [0.0, 60.0]];
        let x = array![[1.0], [2.0]];
        let y = [0, 1];
        let cons = consistency_bound(LOG, z.view(), x.view(), &y).unwrap();
        assert!(cons.lhs < 1e-20 && cons.rhs < 1e-20 && cons.holds);
        assert_eq!(margin_bound(LOG, z.view(), &y, 1.0).unwrap().lhs, 0.0);
        let r = risk_gap_bound(LOG, z.view(), &y).unwrap();
        assert!(r.holds && r.lhs < 1e-20);
    }

    #[test]
    fn duplicate_rows_share_conditional_distribution() {
        let z = Array2::zeros((2, 2));
        let x = array![[1.0], [1.0]];
        let cons = consistency_bound(LOG, z.view(), x.view(), &[0, 1]).unwrap();
        assert!(cons.lhs.abs() < 1e-15 && cons.rhs.abs() < 1e-15);
    }

    #[test]
    fn bounds_reject_bad_input() {
        let z = Array2::zeros((2, 2));
        let x = array![[1.0], [2.0]];
        assert!(consistency_bound(LossKind::SmoothHinge, z.view(), x.view(), &[0, 1]).is_err());
        assert!(margin_bound(LOG, z.view(), &[0, 1], -0.5).is_err());
    }

    #[test]
    fn report_line_format() {
        let r = BoundReport::new("risk_gap", 0.25, 0.5);
        assert_eq!(
            r.to_string(),
            "risk_gap 2.5000000000000000e-1 5.0000000000000000e-1 true 2.5000000000000000e-1"
        );
        assert!(!BoundReport::new("x", 1.0, 0.5).holds);
        assert!(BoundReport::new("x", 1.0 + 5e-10, 1.0).holds);
    }

    fn sample_history(n: usize) -> TrainHistory {
        let mut rng = SplitMix64::new(9);
        let records = (0..n)
            .map(|t| RoundRecord {
                round: t,
                train_risk: rng.next_f64(),
                grad_norm_l1: rng.next_f64() / 3.0,
                train_acc: rng.next_f64(),
                valid_acc: (t % 2 == 0).then(|| rng.next_f64()),
                embed_mse: (t + 1 < n).then(|| rng.next_f64() * 1e-7),
                k: (t + 1 < n).then(|| 1.0),
                sigma_min: rng.next_f64() * 1e-300,
                wall_ms: 12.5,
                samples_used: 3,
                eta: None,
                eta_guard: None,
            })
            .collect();
        TrainHistory {
            records,
            weights: Vec::new(),
            selected: 0,
        }
    }

    #[test]
    fn history_round_trip() {
        let h = sample_history(3);
        let text = history_csv(&h).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap(), HISTORY_HEADER);
        let rows = parse_history_csv(&text).unwrap();
        let expect: Vec<HistoryRow> = h.records.iter().map(HistoryRow::from).collect();
        assert_eq!(rows, expect);
    }

    #[test]
    fn empty_history_is_rejected() {
        assert!(matches!(
            history_csv(&TrainHistory::default()),
            Err(Error::EmptyInput)
        ));
    }
}
