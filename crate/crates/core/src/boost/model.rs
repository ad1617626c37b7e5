use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::layer::ResidualLayer;
use crate::dataio::Standardizer;
use crate::embed::{Embedding, FeatureMap};
use crate::error::{Error, Result};
use crate::kernels;
use crate::linopt::LinearModel;
use crate::loss::{argmax, LossKind};

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: TrainConfig,
    /// Number of layers kept (the selected candidate).
    pub selected_round: usize,
    pub rounds_completed: usize,
    /// Sample-splitting only: size of each per-round subset and samples left over.
    pub subset_size: Option<usize>,
    pub unused_samples: Option<usize>,
    pub crate_version: String,
}

/// `f(x) = wᵀ φ(x)` with `φ` the standardiser followed by the residual stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ResFGBModel<M = Embedding> {
    pub standardizer: Option<Standardizer>,
    pub layers: Vec<ResidualLayer<M>>,
    pub linear: LinearModel,
    pub loss: LossKind,
    pub label_values: Vec<i64>,
    pub meta: ModelMeta,
}

impl<M: FeatureMap + Clone> ResFGBModel<M> {
    pub fn input_dim(&self) -> usize {
        self.linear.d()
    }

    pub fn n_classes(&self) -> usize {
        self.linear.c()
    }

    fn check_width(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::Dimension(format!(
                "model expects {} features, got {got}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// `φ(x)` for every row.
    pub fn represent(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(x.ncols())?;
        let mut z = match &self.standardizer {
            Some(st) => st.transform(x),
            None => x.to_owned(),
        };
        for layer in &self.layers {
            z = layer.apply_batch(z.view())?;
        }
        Ok(z)
    }

    pub fn predict_logits_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.represent(x)?;
        Ok(kernels::linear_logits(z.view(), self.linear.w.view()))
    }

    pub fn predict_logits(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self
            .predict_logits_batch(x.insert_axis(Axis(0)))?
            .row(0)
            .to_owned())
    }

    /// Class index; ties go to the smallest index.
    pub fn predict_class(&self, x: ArrayView1<f64>) -> Result<usize> {
        Ok(argmax(&self.predict_logits(x)?.to_vec()).0)
    }

    /// Raw label (inverse of the label remapping).
    pub fn predict_label(&self, x: ArrayView1<f64>) -> Result<i64> {
        Ok(self.label_values[self.predict_class(x)?])
    }

    pub fn predict_classes(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let logits = self.predict_logits_batch(x)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| argmax(&r.to_vec()).0)
            .collect())
    }

    /// The first `k` layers paired with `linear`.
    pub fn prefix(&self, k: usize, linear: LinearModel) -> Result<Self> {
        if k > self.layers.len() || linear.w.dim() != self.linear.w.dim() {
            return Err(Error::Dimension(format!(
                "cannot take a {k}-layer prefix of {} layers",
                self.layers.len()
            )));
        }
        let mut out = self.clone();
        out.layers.truncate(k);
        out.linear = linear;
        out.meta.selected_round = k;
        Ok(out)
    }
}

/// Index of the largest logit per row, smallest index on ties.
pub fn argmax_rows(logits: ArrayView2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| argmax(&r.to_vec()).0)
        .collect()
}

pub fn accuracy(logits: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let hits = argmax_rows(logits)
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    hits as f64 / labels.len() as f64
}
