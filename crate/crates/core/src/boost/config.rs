use serde::{Deserialize, Serialize};

use crate::embed::EmbedConfig;
use crate::error::{Error, Result};
use crate::linopt::SolverConfig;
use crate::loss::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSchedule {
    Constant(f64),
    /// `first` for rounds `t < T/2`, `second` afterwards.
    TwoPhase {
        first: f64,
        second: f64,
    },
}

impl EtaSchedule {
    pub fn at(&self, round: usize, total: usize) -> f64 {
        match *self {
            EtaSchedule::Constant(eta) => eta,
            EtaSchedule::TwoPhase { first, second } => {
                if 2 * round < total {
                    first
                } else {
                    second
                }
            }
        }
    }

    fn values(&self) -> Vec<f64> {
        match *self {
            EtaSchedule::Constant(eta) => vec![eta],
            EtaSchedule::TwoPhase { first, second } => vec![first, second],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Standard,
    SampleSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Layer budget `T`.
    pub layers: usize,
    /// Rounds during which `w` is refitted; `None` means every round.
    pub t0: Option<usize>,
    pub eta: EtaSchedule,
    pub lambda: f64,
    pub loss: LossKind,
    pub embed: EmbedConfig,
    pub solver: SolverConfig,
    pub valid_fraction: f64,
    /// Stop after this many candidates without a validation improvement.
    pub patience: Option<usize>,
    pub seed: u64,
    pub mode: Mode,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layers: 20,
            t0: None,
            eta: EtaSchedule::Constant(0.1),
            lambda: 0.01,
            loss: LossKind::Logistic,
            embed: EmbedConfig::default(),
            solver: SolverConfig::default(),
            valid_fraction: 0.0,
            patience: Some(10),
            seed: 0,
            mode: Mode::Standard,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn refit_rounds(&self) -> usize {
        self.t0.unwrap_or(self.layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.refit_rounds() > self.layers {
            return Err(Error::Config(format!(
                "t0 = {} exceeds the layer budget {}",
                self.refit_rounds(),
                self.layers
            )));
        }
        if self
            .eta
            .values()
            .iter()
            .any(|&e| !(e > 0.0) || !e.is_finite())
        {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(Error::Config("valid_fraction must lie in [0, 1)".into()));
        }
        if self.mode == Mode::SampleSplit && self.layers == 0 {
            return Err(Error::Config(
                "sample splitting needs at least one layer".into(),
            ));
        }
        self.embed.validate()
    }
}
