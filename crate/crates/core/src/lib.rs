//! Residual functional gradient boosting: a classifier that grows a
//! residual-network feature extractor one layer per boosting round on top of a
//! ridge-regularised linear head.

pub mod boost;
pub mod cli;
pub mod dataio;
pub mod diagnostics;
pub mod embed;
pub mod error;
pub mod kernels;
pub mod linopt;
pub mod loss;
pub mod rng;

pub use boost::{
    train, train_sample_split, EtaSchedule, Mode, ResFGBModel, TrainConfig, TrainHistory,
};
pub use dataio::Dataset;
pub use error::{Error, Result};
pub use loss::LossKind;
