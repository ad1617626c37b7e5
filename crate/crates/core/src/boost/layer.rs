use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::embed::{Embedding, FeatureMap};
use crate::error::{Error, Result};
use crate::kernels;
use crate::linopt::LinearModel;
use crate::loss::LossKind;

/// Gradient rows shorter than this get a zero target.
pub const GRAD_EPS: f64 = 1e-12;

/// `z ↦ z − η A ι(z)`, with `A` of shape `d × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLayer<M = Embedding> {
    pub a: Array2<f64>,
    pub eta: f64,
    pub embedding: M,
}

impl<M: FeatureMap> ResidualLayer<M> {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// The update for one row whose embedding is already known.
    pub fn apply_embedded(&self, z: ArrayView1<f64>, embedded: ArrayView1<f64>) -> Array1<f64> {
        let mut step = Array1::zeros(self.a.nrows());
        kernels::matvec(self.a.view(), embedded, step.view_mut());
        let mut out = z.to_owned();
        for (o, s) in out.iter_mut().zip(&step) {
            *o -= self.eta * s;
        }
        out
    }

    pub fn apply_batch(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "layer acts on dim {}, got {}",
                self.dim(),
                z.ncols()
            )));
        }
        let embedded = self.embedding.forward_batch(z)?;
        Ok(self.apply_embedded_batch(z, embedded.view()))
    }

    pub fn apply_embedded_batch(
        &self,
        z: ArrayView2<f64>,
        embedded: ArrayView2<f64>,
    ) -> Array2<f64> {
        let mut out = Array2::zeros(z.raw_dim());
        for ((zr, er), mut o) in z
            .rows()
            .into_iter()
            .zip(embedded.rows())
            .zip(out.rows_mut())
        {
            o.assign(&self.apply_embedded(zr, er));
        }
        out
    }
}

pub fn apply_layer<M: FeatureMap>(
    layer: &ResidualLayer<M>,
    z: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let out = layer.apply_batch(z.insert_axis(Axis(0)))?;
    Ok(out.row(0).to_owned())
}

/// Row `i` is `∂_z l(z_i, y_i, w) = w ∂_ζ l(wᵀz_i, y_i)`.
pub fn per_sample_gradients(
    z: ArrayView2<f64>,
    labels: &[usize],
    w: &LinearModel,
    kind: LossKind,
) -> Result<Array2<f64>> {
    if z.nrows() != labels.len() || z.ncols() != w.d() {
        return Err(Error::Dimension(format!(
            "representations {:?}, {} labels, weights {:?}",
            z.dim(),
            labels.len(),
            w.w.dim()
        )));
    }
    let logits = kernels::linear_logits(z, w.w.view());
    let mut out = Array2::zeros(z.raw_dim());
    let mut g = vec![0.0; w.c()];
    for ((zeta, &y), mut row) in logits.rows().into_iter().zip(labels).zip(out.rows_mut()) {
        kind.grad_logits_into(&zeta.to_vec(), y, &mut g)?;
        kernels::matvec(w.w.view(), ArrayView1::from(&g[..]), row.view_mut());
    }
    Ok(out)
}

/// `g_i / ‖g_i‖₂`, or zero when `‖g_i‖₂ < GRAD_EPS`.
pub fn normalized_targets(g: ArrayView2<f64>) -> Array2<f64> {
    let mut out = g.to_owned();
    for mut row in out.rows_mut() {
        let nrm = kernels::norm2(row.view());
        if nrm < GRAD_EPS {
            row.fill(0.0);
        } else {
            row /= nrm;
        }
    }
    out
}

/// `A = (1/n) Gᵀ E`.
pub fn layer_matrix(g: ArrayView2<f64>, embedded: ArrayView2<f64>) -> Result<Array2<f64>> {
    if g.nrows() != embedded.nrows() {
        return Err(Error::Dimension(format!(
            "{} gradient rows vs {} embedded rows",
            g.nrows(),
            embedded.nrows()
        )));
    }
    if g.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(g.t().dot(&embedded) / g.nrows() as f64)
}

pub fn build_layer<M: FeatureMap>(
    g: ArrayView2<f64>,
    embedded: ArrayView2<f64>,
    eta: f64,
    embedding: M,
) -> Result<ResidualLayer<M>> {
    if embedded.ncols() != embedding.output_dim() {
        return Err(Error::Dimension(
            "embedded rows do not match the embedding output".into(),
        ));
    }
    Ok(ResidualLayer {
        a: layer_matrix(g, embedded)?,
        eta,
        embedding,
    })
}
