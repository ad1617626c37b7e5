//! Residual functional gradient boosting: layer construction, the training
//! loops and the trained predictor.

mod config;
mod history;
mod layer;
mod model;
mod train;

pub use config::{EtaSchedule, Mode, TrainConfig};
pub use history::{RoundRecord, TrainHistory};
pub use layer::{
    apply_layer, build_layer, layer_matrix, normalized_targets, per_sample_gradients,
    ResidualLayer, GRAD_EPS,
};
pub use model::{accuracy, argmax_rows, ModelMeta, ResFGBModel};
pub use train::{
    sample_split_partition, train, train_sample_split, train_with, EmbeddingFitter, MlpFitter,
    OracleFitter,
};
