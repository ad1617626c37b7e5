//! Last-layer weights `w = argmin_w (1/n) Σ l(wᵀz_i, y_i) + (λ/2)‖w‖²` on a
//! fixed representation, solved with Nesterov's accelerated gradient method.

use log::debug;
use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;
use crate::loss::LossKind;
use crate::rng::SplitMix64;

const POWER_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `d × c`.
    pub w: Array2<f64>,
    pub lambda: f64,
}

impl LinearModel {
    pub fn zeros(d: usize, c: usize, lambda: f64) -> Self {
        Self {
            w: Array2::zeros((d, c)),
            lambda,
        }
    }

    pub fn d(&self) -> usize {
        self.w.nrows()
    }

    pub fn c(&self) -> usize {
        self.w.ncols()
    }

    /// Smallest eigenvalue of `wᵀw`.
    pub fn sigma_min(&self) -> f64 {
        let c = self.c();
        let gram = self.w.t().dot(&self.w);
        let m = nalgebra::DMatrix::from_fn(c, c, |i, j| gram[[i, j]]);
        m.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    /// `1 / (A σ_max(Z)² / n + λ)` with `σ_max` from a 50-step power method.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_epochs: usize,
    /// Stop once `‖∇_w‖_F ≤ tol`; `None` means `1e-7 · max(1, l₀)`.
    pub tol: Option<f64>,
    pub step_size: StepSize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_epochs: 2000,
            tol: None,
            step_size: StepSize::Auto,
        }
    }
}

impl SolverConfig {
    pub fn tolerance(&self, kind: LossKind, c: usize) -> f64 {
        self.tol.unwrap_or(1e-7 * kind.l0(c).max(1.0))
    }
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub model: LinearModel,
    pub converged: bool,
    pub epochs: usize,
    pub grad_norm: f64,
    pub objective: f64,
}

fn check_dims(z: ArrayView2<f64>, labels: &[usize], model: &LinearModel) -> Result<()> {
    if z.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} labels",
            z.nrows(),
            labels.len()
        )));
    }
    if z.ncols() != model.d() {
        return Err(Error::Dimension(format!(
            "representation dim {} vs weight rows {}",
            z.ncols(),
            model.d()
        )));
    }
    if z.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= model.c()) {
        return Err(Error::Label(y));
    }
    Ok(())
}

/// Objective and gradient in one pass over the data.
fn value_and_grad(
    z: ArrayView2<f64>,
    labels: &[usize],
    w: &Array2<f64>,
    lambda: f64,
    kind: LossKind,
) -> Result<(f64, Array2<f64>)> {
    let n = z.nrows() as f64;
    let mut logits = z.dot(w);
    let mut loss = 0.0;
    let mut g = vec![0.0; w.ncols()];
    for (mut row, &y) in logits.rows_mut().into_iter().zip(labels) {
        let zeta = row.to_vec();
        loss += kind.value(&zeta, y)?;
        kind.grad_logits_into(&zeta, y, &mut g)?;
        row.iter_mut().zip(&g).for_each(|(r, v)| *r = *v);
    }
    let mut grad = z.t().dot(&logits);
    Zip::from(&mut grad)
        .and(w)
        .for_each(|gr, &wv| *gr = *gr / n + lambda * wv);
    let reg = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    Ok((loss / n + reg, grad))
}

pub fn objective(
    z: ArrayView2<f64>,
    labels: &[usize],
    model: &LinearModel,
    kind: LossKind,
) -> Result<f64> {
    check_dims(z, labels, model)?;
    let logits = kernels::linear_logits(z, model.w.view());
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        total += kind.value(&row.to_vec(), y)?;
    }
    let reg = 0.5 * model.lambda * model.w.iter().map(|v| v * v).sum::<f64>();
    Ok(total / labels.len() as f64 + reg)
}

pub fn grad_w(
    z: ArrayView2<f64>,
    labels: &[usize],
    model: &LinearModel,
    kind: LossKind,
) -> Result<Array2<f64>> {
    check_dims(z, labels, model)?;
    Ok(value_and_grad(z, labels, &model.w, model.lambda, kind)?.1)
}

/// Largest squared singular value of `z` by power iteration on `zᵀz`.
fn sigma_max_sq(z: ArrayView2<f64>) -> f64 {
    let mut rng = SplitMix64::new(0x5eed);
    let mut v = ndarray::Array1::from_shape_fn(z.ncols(), |_| rng.uniform(-1.0, 1.0));
    let mut est = 0.0;
    for _ in 0..POWER_ITERS {
        let nv = v.dot(&v).sqrt();
        if nv == 0.0 {
            return 0.0;
        }
        v /= nv;
        let zv = z.dot(&v);
        est = zv.dot(&zv);
        v = z.t().dot(&zv);
    }
    est
}

fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Accelerated gradient with adaptive restart: momentum is reset when the
/// gradient at the extrapolated point opposes the last move, and a step that
/// would raise the objective is replaced by a plain gradient step from the
/// current iterate, so the objective is non-increasing along iterates.
pub fn fit_linear(
    z: ArrayView2<f64>,
    labels: &[usize],
    n_classes: usize,
    lambda: f64,
    kind: LossKind,
    cfg: &SolverConfig,
    w_init: Option<&LinearModel>,
) -> Result<LinearFit> {
    fit_linear_traced(z, labels, n_classes, lambda, kind, cfg, w_init, None)
}

#[allow(clippy::too_many_arguments)]
fn fit_linear_traced(
    z: ArrayView2<f64>,
    labels: &[usize],
    n_classes: usize,
    lambda: f64,
    kind: LossKind,
    cfg: &SolverConfig,
    w_init: Option<&LinearModel>,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<LinearFit> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if cfg.max_epochs == 0 {
        return Err(Error::Config("max_epochs must be at least 1".into()));
    }
    let d = z.ncols();
    let mut x = match w_init {
        Some(m) if m.w.dim() == (d, n_classes) => m.w.clone(),
        Some(m) => {
            return Err(Error::Dimension(format!(
                "warm start is {:?}, need {:?}",
                m.w.dim(),
                (d, n_classes)
            )))
        }
        None => Array2::zeros((d, n_classes)),
    };
    check_dims(z, labels, &LinearModel::zeros(d, n_classes, lambda))?;
    let tol = cfg.tolerance(kind, n_classes);
    let mut lip = match cfg.step_size {
        StepSize::Auto => {
            kind.hessian_bound(n_classes) * sigma_max_sq(z) / z.nrows() as f64 + lambda
        }
        StepSize::Fixed(s) if s > 0.0 => 1.0 / s,
        StepSize::Fixed(s) => {
            return Err(Error::Config(format!(
                "step size must be positive, got {s}"
            )))
        }
    };

    let (mut fx, mut gx) = value_and_grad(z, labels, &x, lambda, kind)?;
    let mut x_prev = x.clone();
    let mut t = 1.0f64;
    let mut epochs = 0;
    let mut gnorm = frob(&gx);
    if let Some(tr) = trace.as_deref_mut() {
        tr.push(fx);
    }

    while gnorm > tol && epochs < cfg.max_epochs {
        epochs += 1;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let (y, gy) = if beta == 0.0 {
            (x.clone(), gx.clone())
        } else {
            let y = &x + &((&x - &x_prev) * beta);
            let gy = value_and_grad(z, labels, &y, lambda, kind)?.1;
            (y, gy)
        };
        let mut cand = &y - &(&gy / lip);
        let (mut fc, mut gc) = value_and_grad(z, labels, &cand, lambda, kind)?;
        let restart = if fc > fx {
            loop {
                cand = &x - &(&gx / lip);
                (fc, gc) = value_and_grad(z, labels, &cand, lambda, kind)?;
                if fc <= fx || lip > 1e300 {
                    break;
                }
                lip *= 2.0;
                debug!("linear solver: doubling curvature estimate to {lip:e}");
            }
            true
        } else {
            let opposes: f64 = Zip::from(&gy)
                .and(&cand)
                .and(&x)
                .fold(0.0, |acc, &g, &c, &xo| acc + g * (c - xo));
            opposes > 0.0
        };
        if fc > fx {
            // No descent even with a tiny step: x is as good as it gets.
            break;
        }
        x_prev = std::mem::replace(&mut x, cand);
        fx = fc;
        gx = gc;
        gnorm = frob(&gx);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(fx);
        }
        t = if restart { 1.0 } else { t_next };
    }

    Ok(LinearFit {
        model: LinearModel { w: x, lambda },
        converged: gnorm <= tol,
        epochs,
        grad_norm: gnorm,
        objective: fx,
    })
}
