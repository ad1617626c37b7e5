//! Multiclass losses `l(ζ, y)`, their logit gradients, the chain rule into
//! representation space and the dataset-level functional-gradient norm.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy.
    Logistic,
    /// One-vs-rest smoothed hinge `Σ_{y'≠y} ψ(1 + ζ_{y'} − ζ_y)` with
    /// `ψ(t) = 0` for `t ≤ 0`, `t²/2` on `(0, 1)` and `t − 1/2` beyond.
    SmoothHinge,
}

fn psi(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t < 1.0 {
        0.5 * t * t
    } else {
        t - 0.5
    }
}

fn psi_prime(t: f64) -> f64 {
    t.clamp(0.0, 1.0)
}

fn check_label(y: usize, c: usize) -> Result<()> {
    if y >= c {
        Err(Error::Label(y))
    } else {
        Ok(())
    }
}

impl LossKind {
    pub fn value(self, logits: &[f64], y: usize) -> Result<f64> {
        check_label(y, logits.len())?;
        Ok(match self {
            LossKind::Logistic => {
                let (imax, m) = argmax(logits);
                let rest: f64 = logits
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != imax)
                    .map(|(_, &z)| (z - m).exp())
                    .sum();
                rest.ln_1p() + (m - logits[y])
            }
            LossKind::SmoothHinge => {
                let zy = logits[y];
                logits
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != y)
                    .map(|(_, &z)| psi(1.0 + z - zy))
                    .sum()
            }
        })
    }

    /// Writes `∂_ζ l(ζ, y)` into `out`.
    pub fn grad_logits_into(self, logits: &[f64], y: usize, out: &mut [f64]) -> Result<()> {
        check_label(y, logits.len())?;
        if out.len() != logits.len() {
            return Err(Error::Dimension(format!(
                "gradient buffer {} vs {} logits",
                out.len(),
                logits.len()
            )));
        }
        match self {
            LossKind::Logistic => {
                let (_, m) = argmax(logits);
                let mut s = 0.0;
                for (o, &z) in out.iter_mut().zip(logits) {
                    *o = (z - m).exp();
                    s += *o;
                }
                for o in out.iter_mut() {
                    *o /= s;
                }
                out[y] -= 1.0;
            }
            LossKind::SmoothHinge => {
                let zy = logits[y];
                let mut total = 0.0;
                for (k, (o, &z)) in out.iter_mut().zip(logits).enumerate() {
                    if k == y {
                        *o = 0.0;
                    } else {
                        *o = psi_prime(1.0 + z - zy);
                        total += *o;
                    }
                }
                out[y] = -total;
            }
        }
        Ok(())
    }

    pub fn grad_logits(self, logits: &[f64], y: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; logits.len()];
        self.grad_logits_into(logits, y, &mut out)?;
        Ok(out)
    }

    /// `l₀ = max_y l(0, y)`.
    pub fn l0(self, c: usize) -> f64 {
        match self {
            LossKind::Logistic => (c as f64).ln(),
            LossKind::SmoothHinge => (c as f64 - 1.0) / 2.0,
        }
    }

    /// Bound `A` on the spectral norm of `∂²_ζ l`.
    pub fn hessian_bound(self, c: usize) -> f64 {
        match self {
            LossKind::Logistic => 0.5,
            LossKind::SmoothHinge => c as f64,
        }
    }

    /// `c_λ = √(2 l₀ / λ)`, the norm bound on any ridge minimiser.
    pub fn c_lambda(self, c: usize, lambda: f64) -> f64 {
        (2.0 * self.l0(c) / lambda).sqrt()
    }

    /// Learning-rate ceiling `1 / (A c_λ² K)` under which a layer step is a
    /// guaranteed descent step.
    pub fn eta_guard(self, c: usize, lambda: f64, k: f64) -> f64 {
        let cl = self.c_lambda(c, lambda);
        1.0 / (self.hessian_bound(c) * cl * cl * k)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::SmoothHinge => "smooth_hinge",
        }
    }
}

/// First index of the largest entry.
pub fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (k, x);
        }
    }
    best
}

/// `∂_z l(z, y, w) = w ∂_ζ l`, with `w` stored `d × c`.
pub fn grad_input(w: ArrayView2<f64>, g_logits: ArrayView1<f64>) -> Result<Array1<f64>> {
    if w.ncols() != g_logits.len() {
        return Err(Error::Dimension(format!(
            "weight has {} classes, gradient has {}",
            w.ncols(),
            g_logits.len()
        )));
    }
    let mut out = Array1::zeros(w.nrows());
    kernels::matvec(w, g_logits, out.view_mut());
    Ok(out)
}

/// `(1/n) Σ_i ‖∂_ζ l(ζ_i, y_i)‖₂`.
pub fn grad_norm_l1(kind: LossKind, logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows vs {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let mut g = vec![0.0; logits.ncols()];
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let z = row.to_vec();
        kind.grad_logits_into(&z, y, &mut g)?;
        total += kernels::dot(&g, &g).sqrt();
    }
    Ok(total / labels.len() as f64)
}

/// Mean loss over rows.
pub fn mean_loss(kind: LossKind, logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows vs {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        total += kind.value(&row.to_vec(), y)?;
    }
    Ok(total / labels.len() as f64)
}
