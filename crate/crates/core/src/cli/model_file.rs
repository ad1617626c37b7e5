//! Versioned JSON model files. Every float is written with 17 significant
//! digits so that a save/load cycle reproduces the weights bit for bit.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::boost::{ModelMeta, ResFGBModel, ResidualLayer};
use crate::dataio::Standardizer;
use crate::diagnostics::format_f64;
use crate::embed::{Dense, Embedding, FeatureMap};
use crate::error::{Error, Result};
use crate::linopt::LinearModel;
use crate::loss::LossKind;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Num(f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(S::Error::custom(format!(
                "cannot store non-finite value {}",
                self.0
            )));
        }
        RawValue::from_string(format_f64(self.0))
            .map_err(S::Error::custom)?
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(d).map(Num)
    }
}

fn nums(values: impl IntoIterator<Item = f64>) -> Vec<Num> {
    values.into_iter().map(Num).collect()
}

fn floats(values: &[Num]) -> Vec<f64> {
    values.iter().map(|n| n.0).collect()
}

/// Row-major matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    data: Vec<Num>,
}

impl MatrixRecord {
    fn from_array(m: &Array2<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: nums(m.iter().copied()),
        }
    }

    fn to_array(&self, what: &str) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), floats(&self.data)).map_err(|_| {
            Error::Model(format!(
                "{what}: {} values do not fill {}×{}",
                self.data.len(),
                self.rows,
                self.cols
            ))
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DenseRecord {
    weight: MatrixRecord,
    bias: Vec<Num>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddingRecord {
    dims: Vec<usize>,
    activation: String,
    project_unit_ball: bool,
    layers: Vec<DenseRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRecord {
    eta: Num,
    a: MatrixRecord,
    embedding: EmbeddingRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StandardizerRecord {
    mean: Vec<Num>,
    scale: Vec<Num>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    loss: LossKind,
    lambda: Num,
    seed: u64,
    label_values: Vec<i64>,
    training: ModelMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    metadata: Metadata,
    standardizer: Option<StandardizerRecord>,
    layers: Vec<LayerRecord>,
    linear: MatrixRecord,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

const ACTIVATION: &str = "relu";

fn embedding_record(e: &Embedding) -> EmbeddingRecord {
    EmbeddingRecord {
        dims: e.dims(),
        activation: ACTIVATION.to_string(),
        project_unit_ball: e.project_unit_ball(),
        layers: e
            .layers()
            .iter()
            .map(|l| DenseRecord {
                weight: MatrixRecord::from_array(&l.weight),
                bias: nums(l.bias.iter().copied()),
            })
            .collect(),
    }
}

fn embedding_from(r: &EmbeddingRecord) -> Result<Embedding> {
    if r.activation != ACTIVATION {
        return Err(Error::Model(format!(
            "unsupported activation {:?}",
            r.activation
        )));
    }
    let layers = r
        .layers
        .iter()
        .map(|l| {
            Ok(Dense {
                weight: l.weight.to_array("embedding weight")?,
                bias: Array1::from(floats(&l.bias)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let e = Embedding::from_layers(layers, r.project_unit_ball)?;
    if e.dims() != r.dims {
        return Err(Error::Model(format!(
            "embedding dims {:?} do not match weights {:?}",
            r.dims,
            e.dims()
        )));
    }
    Ok(e)
}

/// Serialises the model to its JSON document.
pub fn to_json(model: &ResFGBModel) -> Result<String> {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        metadata: Metadata {
            loss: model.loss,
            lambda: Num(model.linear.lambda),
            seed: model.meta.config.seed,
            label_values: model.label_values.clone(),
            training: model.meta.clone(),
        },
        standardizer: model.standardizer.as_ref().map(|s| StandardizerRecord {
            mean: nums(s.mean.iter().copied()),
            scale: nums(s.scale.iter().copied()),
        }),
        layers: model
            .layers
            .iter()
            .map(|l| LayerRecord {
                eta: Num(l.eta),
                a: MatrixRecord::from_array(&l.a),
                embedding: embedding_record(&l.embedding),
            })
            .collect(),
        linear: MatrixRecord::from_array(&model.linear.w),
    };
    let mut text = serde_json::to_string(&file)?;
    text.push('\n');
    Ok(text)
}

/// Parses a JSON model document, rejecting other format versions.
pub fn from_json(text: &str) -> Result<ResFGBModel> {
    let probe: VersionProbe = serde_json::from_str(text)?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: probe.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_str(text)?;
    let w = file.linear.to_array("linear weights")?;
    let (d, c) = w.dim();
    if file.metadata.label_values.len() != c {
        return Err(Error::Model(format!(
            "{} label values for {c} classes",
            file.metadata.label_values.len()
        )));
    }
    let standardizer = match &file.standardizer {
        Some(s) if s.mean.len() == d && s.scale.len() == d => Some(Standardizer {
            mean: Array1::from(floats(&s.mean)),
            scale: Array1::from(floats(&s.scale)),
        }),
        Some(s) => {
            return Err(Error::Model(format!(
                "standardizer has {} entries, model has {d} features",
                s.mean.len()
            )))
        }
        None => None,
    };
    let layers = file
        .layers
        .iter()
        .map(|l| {
            let embedding = embedding_from(&l.embedding)?;
            let a = l.a.to_array("layer matrix")?;
            if a.nrows() != d || a.ncols() != embedding.output_dim() || embedding.input_dim() != d {
                return Err(Error::Model(format!(
                    "layer shapes do not chain through dimension {d}"
                )));
            }
            Ok(ResidualLayer {
                a,
                eta: l.eta.0,
                embedding,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResFGBModel {
        standardizer,
        layers,
        linear: LinearModel {
            w,
            lambda: file.metadata.lambda.0,
        },
        loss: file.metadata.loss,
        label_values: file.metadata.label_values,
        meta: file.metadata.training,
    })
}

pub fn save_model(model: &ResFGBModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ResFGBModel> {
    from_json(&std::fs::read_to_string(path)?)
}
