//! The per-round embedding: a small ReLU network regressed onto the
//! unit-normalised functional gradient, plus an exact lookup fixture.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;
use crate::rng::SplitMix64;

/// Anything that maps a batch of representations to embedded rows.
pub trait FeatureMap {
    fn output_dim(&self) -> usize;
    fn forward_batch(&self, z: ArrayView2<f64>) -> Result<Array2<f64>>;
}

/// One affine layer, `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    layers: Vec<Dense>,
    project_unit_ball: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub project_unit_ball: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100],
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-2,
            momentum: 0.9,
            seed: 0,
            project_unit_ball: true,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "embedding learning rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `d → hidden… → out_dim`. Hidden weights are uniform in `±√(3 / fan_in)`,
/// drawn row by row, layer by layer from `SplitMix64::new(cfg.seed)`. The
/// output layer and all biases start at zero, so the initial output is zero
/// and the initial MSE is the mean squared target norm.
pub fn init_embedding(d: usize, out_dim: usize, cfg: &EmbedConfig) -> Result<Embedding> {
    if d == 0 || out_dim == 0 {
        return Err(Error::Config(
            "embedding dimensions must be positive".into(),
        ));
    }
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let mut dims = vec![d];
    dims.extend(&cfg.hidden);
    dims.push(out_dim);
    let last = dims.len() - 2;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(k, p)| {
            let weight = if k == last {
                Array2::zeros((p[1], p[0]))
            } else {
                let bound = (3.0 / p[0] as f64).sqrt();
                Array2::from_shape_simple_fn((p[1], p[0]), || rng.uniform(-bound, bound))
            };
            Dense {
                weight,
                bias: Array1::zeros(p[1]),
            }
        })
        .collect();
    Ok(Embedding {
        layers,
        project_unit_ball: cfg.project_unit_ball,
    })
}

impl Embedding {
    pub fn from_layers(layers: Vec<Dense>, project_unit_ball: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension(
                "embedding needs at least one layer".into(),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() || l.fan_in() == 0 || l.fan_out() == 0 {
                return Err(Error::Dimension(format!(
                    "layer {i} has inconsistent shapes"
                )));
            }
        }
        for (i, p) in layers.windows(2).enumerate() {
            if p[0].fan_out() != p[1].fan_in() {
                return Err(Error::Dimension(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    p[0].fan_out(),
                    i + 1,
                    p[1].fan_in()
                )));
            }
        }
        Ok(Self {
            layers,
            project_unit_ball,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn project_unit_ball(&self) -> bool {
        self.project_unit_ball
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    /// `[d, h₁, …, D]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::fan_out))
            .collect()
    }

    pub fn forward(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "embedding takes {} inputs, got {}",
                self.input_dim(),
                z.len()
            )));
        }
        let mut a = z.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut next = Array1::zeros(l.fan_out());
            kernels::affine_row(l.weight.view(), l.bias.view(), a.view(), next.view_mut());
            if i < last {
                next.mapv_inplace(|v| v.max(0.0));
            }
            a = next;
        }
        if self.project_unit_ball && kernels::sq_norm(a.view()) > 1.0 {
            a /= kernels::norm2(a.view());
            // Rounding can leave the norm a few ulps above one.
            while kernels::sq_norm(a.view()) > 1.0 {
                a *= 1.0 - f64::EPSILON;
            }
        }
        Ok(a)
    }

    /// Activations of every layer (pre-ReLU for hidden layers) for a batch,
    /// without output projection. Uses GEMM; training only.
    fn forward_train(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let prev = acts.last().unwrap();
            let input = if i == 0 {
                prev.clone()
            } else {
                prev.mapv(|v| v.max(0.0))
            };
            let mut pre = input.dot(&l.weight.t());
            pre += &l.bias;
            acts.push(pre);
        }
        acts
    }

    /// Mean over rows of `‖ι(x) − t‖²` on the raw (unprojected) output.
    pub fn mse(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
        check_shapes(self, inputs, targets)?;
        let acts = self.forward_train(inputs);
        let out = acts.last().unwrap();
        Ok(sq_dist(out.view(), targets) / inputs.nrows() as f64)
    }

    /// MSE and its gradient with respect to every weight and bias.
    pub fn mse_and_grad(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, Vec<Dense>)> {
        check_shapes(self, inputs, targets)?;
        let b = inputs.nrows() as f64;
        let acts = self.forward_train(inputs);
        let out = acts.last().unwrap();
        let loss = sq_dist(out.view(), targets) / b;

        let mut delta = (out - &targets) * (2.0 / b);
        let mut grads: Vec<Dense> = self.layers.iter().map(Dense::zeros_like).collect();
        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 {
                acts[0].clone()
            } else {
                acts[l].mapv(|v| v.max(0.0))
            };
            grads[l].weight = delta.t().dot(&input);
            grads[l].bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weight);
                Zip::from(&mut back).and(&acts[l]).for_each(|g, &pre| {
                    if pre <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
        }
        Ok((loss, grads))
    }
}

impl FeatureMap for Embedding {
    fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    fn forward_batch(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((z.nrows(), self.output_dim()));
        for (row, mut o) in z.rows().into_iter().zip(out.rows_mut()) {
            o.assign(&self.forward(row)?);
        }
        Ok(out)
    }
}

fn check_shapes(e: &Embedding, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<()> {
    if inputs.ncols() != e.input_dim()
        || targets.ncols() != e.output_dim()
        || inputs.nrows() != targets.nrows()
    {
        return Err(Error::Dimension(format!(
            "embedding {:?} cannot fit inputs {:?} to targets {:?}",
            e.dims(),
            inputs.dim(),
            targets.dim()
        )));
    }
    if inputs.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

fn sq_dist(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
}

/// Mini-batch SGD with Nesterov momentum (`v ← μv + g`, `θ ← θ − lr(g + μv)`)
/// on the mean squared error. Batches follow a fresh `cfg.seed`-driven
/// permutation each epoch. The returned embedding is the epoch-end snapshot
/// (or the initial one) with the lowest full-data MSE, together with that MSE.
pub fn fit_to_targets(
    e: &Embedding,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    cfg: &EmbedConfig,
) -> Result<(Embedding, f64)> {
    cfg.validate()?;
    let mut best_mse = e.mse(inputs, targets)?;
    if !best_mse.is_finite() {
        return Err(Error::Diverged { epoch: 0 });
    }
    let mut best = e.clone();
    let mut cur = e.clone();
    let mut velocity: Vec<Dense> = cur.layers.iter().map(Dense::zeros_like).collect();
    let mut rng = SplitMix64::new(cfg.seed ^ 0xba7c_4e5d);
    let (lr, mu) = (cfg.learning_rate, cfg.momentum);
    let n = inputs.nrows();

    for epoch in 1..=cfg.epochs {
        let perm = rng.permutation(n);
        for chunk in perm.chunks(cfg.batch_size) {
            let xb = inputs.select(Axis(0), chunk);
            let tb = targets.select(Axis(0), chunk);
            let (loss, grads) = cur.mse_and_grad(xb.view(), tb.view())?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            for ((layer, vel), g) in cur.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                Zip::from(&mut layer.weight)
                    .and(&mut vel.weight)
                    .and(&g.weight)
                    .for_each(|w, v, &gw| {
                        *v = mu * *v + gw;
                        *w -= lr * (gw + mu * *v);
                    });
                Zip::from(&mut layer.bias)
                    .and(&mut vel.bias)
                    .and(&g.bias)
                    .for_each(|w, v, &gw| {
                        *v = mu * *v + gw;
                        *w -= lr * (gw + mu * *v);
                    });
            }
        }
        let mse = cur.mse(inputs, targets)?;
        if !mse.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if mse < best_mse {
            best_mse = mse;
            best = cur.clone();
        }
    }
    Ok((best, best_mse))
}

/// Exact lookup `z_i ↦ t_i` over a fixed set of representations, matched by
/// bit pattern. Defined only on those rows; used to run the boosting update
/// with the exact normalised gradient field.
#[derive(Debug, Clone)]
pub struct OracleEmbedding {
    index: HashMap<Vec<u64>, usize>,
    targets: Array2<f64>,
    input_dim: usize,
}

fn row_key(row: ArrayView1<f64>) -> Vec<u64> {
    row.iter().map(|v| v.to_bits()).collect()
}

impl OracleEmbedding {
    pub fn new(inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::Dimension(
                "oracle inputs and targets differ in rows".into(),
            ));
        }
        let mut index = HashMap::with_capacity(inputs.nrows());
        for (i, row) in inputs.rows().into_iter().enumerate() {
            index.entry(row_key(row)).or_insert(i);
        }
        Ok(Self {
            index,
            targets: targets.to_owned(),
            input_dim: inputs.ncols(),
        })
    }

    pub fn forward(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        if z.len() != self.input_dim {
            return Err(Error::Dimension("oracle query has the wrong width".into()));
        }
        self.index
            .get(&row_key(z))
            .map(|&i| self.targets.row(i).to_owned())
            .ok_or_else(|| Error::Dimension("oracle embedding queried off its training set".into()))
    }
}

impl FeatureMap for OracleEmbedding {
    fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    fn forward_batch(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((z.nrows(), self.output_dim()));
        for (row, mut o) in z.rows().into_iter().zip(out.rows_mut()) {
            o.assign(&self.forward(row)?);
        }
        Ok(out)
    }
}

/// Largest squared output norm over a batch (the measured `K`).
pub fn max_sq_norm(embedded: ArrayView2<f64>) -> f64 {
    embedded
        .rows()
        .into_iter()
        .map(kernels::sq_norm)
        .fold(0.0, f64::max)
}
