//! The boosting loops. Each round refits (or reuses) the last-layer weights,
//! computes per-sample functional gradients, fits an embedding to their
//! unit-normalised field, stacks the layer `z ↦ z − η A ι(z)` and advances the
//! cached representations of the training and validation sets.

use std::time::Instant;

use log::{debug, error, info, warn};
use ndarray::{Array2, ArrayView2, Axis};

use super::config::{Mode, TrainConfig};
use super::history::{RoundRecord, TrainHistory};
use super::layer::{build_layer, normalized_targets, per_sample_gradients, ResidualLayer};
use super::model::{accuracy, ModelMeta, ResFGBModel};
use crate::dataio::{split_train_valid, Dataset, SplitSpec, Standardizer};
use crate::embed::{
    fit_to_targets, init_embedding, max_sq_norm, EmbedConfig, Embedding, FeatureMap,
    OracleEmbedding,
};
use crate::error::{Error, Result};
use crate::kernels;
use crate::linopt::{fit_linear, LinearFit, LinearModel};
use crate::loss::{grad_norm_l1, mean_loss};
use crate::rng::SplitMix64;

const PARTITION_STREAM: u64 = 1;
const EMBED_STREAM_BASE: u64 = 2;

/// Produces the round-`t` embedding from representations and targets.
pub trait EmbeddingFitter {
    type Map: FeatureMap + Clone;

    /// Returns the fitted map and its final mean squared error.
    fn fit(
        &mut self,
        round: usize,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(Self::Map, f64)>;
}

/// Trains a fresh MLP each round, seeded from `(seed, round)`.
#[derive(Debug, Clone)]
pub struct MlpFitter {
    pub cfg: EmbedConfig,
    pub seed: u64,
}

impl EmbeddingFitter for MlpFitter {
    type Map = Embedding;

    fn fit(
        &mut self,
        round: usize,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(Embedding, f64)> {
        let seed = SplitMix64::derive(self.seed, EMBED_STREAM_BASE + round as u64).next_u64();
        let cfg = EmbedConfig {
            seed,
            ..self.cfg.clone()
        };
        let init = init_embedding(inputs.ncols(), targets.ncols(), &cfg)?;
        fit_to_targets(&init, inputs, targets, &cfg)
    }
}

/// Uses the exact normalised gradient field as the embedding.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleFitter;

impl EmbeddingFitter for OracleFitter {
    type Map = OracleEmbedding;

    fn fit(
        &mut self,
        _round: usize,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(OracleEmbedding, f64)> {
        Ok((OracleEmbedding::new(inputs, targets)?, 0.0))
    }
}

/// Standard boosting with a fresh MLP embedding per round.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(ResFGBModel, TrainHistory)> {
    let cfg = TrainConfig {
        mode: Mode::Standard,
        ..cfg.clone()
    };
    train_with(
        ds,
        &cfg,
        MlpFitter {
            cfg: cfg.embed.clone(),
            seed: cfg.seed,
        },
    )
}

/// Sample-splitting boosting: round `t` sees only the `t+1`-th of `T`
/// disjoint subsets of size `⌊n/T⌋` and `w` stays at `w₀`.
pub fn train_sample_split(ds: &Dataset, cfg: &TrainConfig) -> Result<(ResFGBModel, TrainHistory)> {
    let cfg = TrainConfig {
        mode: Mode::SampleSplit,
        t0: Some(0),
        ..cfg.clone()
    };
    train_with(
        ds,
        &cfg,
        MlpFitter {
            cfg: cfg.embed.clone(),
            seed: cfg.seed,
        },
    )
}

/// Disjoint subsets of `⌊n/T⌋` indices from a seeded permutation; the
/// remaining `n − T⌊n/T⌋` indices are left out.
pub fn sample_split_partition(n: usize, rounds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if rounds == 0 || rounds > n {
        return Err(Error::Config(format!(
            "cannot split {n} samples into {rounds} subsets"
        )));
    }
    let m = n / rounds;
    let perm = SplitMix64::derive(seed, PARTITION_STREAM).permutation(n);
    Ok(perm
        .chunks_exact(m)
        .take(rounds)
        .map(<[usize]>::to_vec)
        .collect())
}

struct Evaluated {
    train_risk: f64,
    grad_norm: f64,
    train_acc: f64,
    valid_acc: Option<f64>,
}

struct Engine<'a> {
    cfg: &'a TrainConfig,
    train: Dataset,
    valid: Option<Dataset>,
    z: Array2<f64>,
    zv: Option<Array2<f64>>,
}

impl Engine<'_> {
    fn fit_w(&self, rows: Option<&[usize]>, warm: Option<&LinearModel>) -> Result<LinearModel> {
        let (z, labels) = match rows {
            Some(idx) => (
                self.z.select(Axis(0), idx),
                idx.iter().map(|&i| self.train.labels()[i]).collect(),
            ),
            None => (self.z.clone(), self.train.labels().to_vec()),
        };
        let LinearFit {
            model,
            converged,
            epochs,
            grad_norm,
            ..
        } = fit_linear(
            z.view(),
            &labels,
            self.train.c(),
            self.cfg.lambda,
            self.cfg.loss,
            &self.cfg.solver,
            warm,
        )?;
        if !converged {
            warn!("linear solver stopped after {epochs} epochs with gradient norm {grad_norm:.3e}");
        } else {
            debug!("linear solver converged in {epochs} epochs");
        }
        Ok(model)
    }

    fn evaluate(&self, w: &LinearModel) -> Result<Evaluated> {
        let kind = self.cfg.loss;
        let logits = kernels::linear_logits(self.z.view(), w.w.view());
        let labels = self.train.labels();
        let reg = 0.5 * w.lambda * w.w.iter().map(|v| v * v).sum::<f64>();
        let valid_acc = match (&self.zv, &self.valid) {
            (Some(zv), Some(v)) => Some(accuracy(
                kernels::linear_logits(zv.view(), w.w.view()).view(),
                v.labels(),
            )),
            _ => None,
        };
        Ok(Evaluated {
            train_risk: mean_loss(kind, logits.view(), labels)? + reg,
            grad_norm: grad_norm_l1(kind, logits.view(), labels)?,
            train_acc: accuracy(logits.view(), labels),
            valid_acc,
        })
    }
}

/// The boosting loop with a pluggable embedding fitter. `cfg.mode` selects
/// between the standard and sample-splitting variants.
pub fn train_with<F: EmbeddingFitter>(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut fitter: F,
) -> Result<(ResFGBModel<F::Map>, TrainHistory)> {
    cfg.validate()?;
    let (train_raw, valid_raw) = split_train_valid(
        ds,
        SplitSpec {
            valid_fraction: cfg.valid_fraction,
            seed: cfg.seed,
        },
    )?;
    let standardizer = cfg
        .standardize
        .then(|| Standardizer::fit(train_raw.features()));
    let prep = |d: &Dataset| match &standardizer {
        Some(st) => st.transform(d.features()),
        None => d.features().to_owned(),
    };
    let z = prep(&train_raw);
    let zv = valid_raw.as_ref().map(prep);
    let mut eng = Engine {
        cfg,
        train: train_raw,
        valid: valid_raw,
        z,
        zv,
    };

    let total = cfg.layers;
    let kind = cfg.loss;
    let c = eng.train.c();
    let split = cfg.mode == Mode::SampleSplit;
    let subsets = if split {
        Some(sample_split_partition(eng.train.n(), total, cfg.seed)?)
    } else {
        None
    };
    let refit_rounds = if split { 0 } else { cfg.refit_rounds() };

    let mut history = TrainHistory::default();
    let mut layers: Vec<ResidualLayer<F::Map>> = Vec::new();
    let mut w = eng.fit_w(subsets.as_ref().map(|s| s[0].as_slice()), None)?;
    let mut best: Option<(f64, usize)> = None;
    let mut stopped_early = false;

    for t in 0..=total {
        let started = Instant::now();
        let is_final = t == total;
        if t > 0 && (t < refit_rounds || (is_final && !split)) {
            w = eng.fit_w(None, Some(&w))?;
        }
        let ev = eng.evaluate(&w)?;
        let mut record = RoundRecord {
            round: t,
            train_risk: ev.train_risk,
            grad_norm_l1: ev.grad_norm,
            train_acc: ev.train_acc,
            valid_acc: ev.valid_acc,
            embed_mse: None,
            k: None,
            sigma_min: w.sigma_min(),
            wall_ms: 0.0,
            samples_used: 0,
            eta: None,
            eta_guard: None,
        };
        history.weights.push(w.clone());

        if let Some(acc) = ev.valid_acc {
            if best.map_or(true, |(b, _)| acc > b) {
                best = Some((acc, t));
            }
        }
        let patience_hit = match (best, cfg.patience) {
            (Some((_, bt)), Some(p)) => t - bt >= p,
            _ => false,
        };
        if is_final || patience_hit {
            record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
            history.records.push(record);
            stopped_early = patience_hit && !is_final;
            break;
        }

        // Round t: gradients at (φ_t, w_{t+1}) on this round's samples.
        let (zs, labels): (Array2<f64>, Vec<usize>) = match &subsets {
            Some(s) => (
                eng.z.select(Axis(0), &s[t]),
                s[t].iter().map(|&i| eng.train.labels()[i]).collect(),
            ),
            None => (eng.z.clone(), eng.train.labels().to_vec()),
        };
        let g = per_sample_gradients(zs.view(), &labels, &w, kind)?;
        let targets = normalized_targets(g.view());
        let (map, mse) = fitter
            .fit(t, zs.view(), targets.view())
            .map_err(|e| match e {
                Error::Diverged { epoch } => {
                    error!("round {t}: embedding training diverged at epoch {epoch}");
                    Error::NonFinite { round: t }
                }
                e => e,
            })?;
        let embedded = map.forward_batch(zs.view())?;
        let k = max_sq_norm(embedded.view());
        let eta = cfg.eta.at(t, total);
        let guard = kind.eta_guard(c, cfg.lambda, k);
        if eta > guard {
            if t == 0 {
                warn!("learning rate {eta} exceeds the descent guard {guard:.3e} (K = {k:.3})");
            } else {
                debug!("round {t}: learning rate {eta} exceeds the descent guard {guard:.3e}");
            }
        }
        let layer = build_layer(g.view(), embedded.view(), eta, map)?;

        eng.z = if subsets.is_some() {
            layer.apply_batch(eng.z.view())?
        } else {
            layer.apply_embedded_batch(eng.z.view(), embedded.view())
        };
        if eng.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { round: t });
        }
        if let Some(zv) = &eng.zv {
            let next = layer.apply_batch(zv.view())?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { round: t });
            }
            eng.zv = Some(next);
        }
        layers.push(layer);

        record.embed_mse = Some(mse);
        record.k = Some(k);
        record.samples_used = labels.len();
        record.eta = Some(eta);
        record.eta_guard = Some(guard);
        record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        info!(
            "round {t}: risk {:.6} grad {:.4e} train_acc {:.4} valid_acc {} mse {mse:.4} K {k:.3}",
            record.train_risk,
            record.grad_norm_l1,
            record.train_acc,
            record
                .valid_acc
                .map_or("-".to_string(), |a| format!("{a:.4}"))
        );
        history.records.push(record);
    }

    let last = history.records.len() - 1;
    let selected = best.map_or(last, |(_, t)| t);
    if stopped_early {
        info!(
            "early stopping after {} rounds; keeping {selected} layers",
            history.rounds_completed()
        );
    }
    history.selected = selected;
    layers.truncate(selected);

    let meta = ModelMeta {
        config: cfg.clone(),
        selected_round: selected,
        rounds_completed: history.rounds_completed(),
        subset_size: subsets.as_ref().map(|s| s[0].len()),
        unused_samples: subsets
            .as_ref()
            .map(|s| eng.train.n() - s.iter().map(Vec::len).sum::<usize>()),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let model = ResFGBModel {
        standardizer,
        layers,
        linear: history.weights[selected].clone(),
        loss: kind,
        label_values: eng.train.label_values().to_vec(),
        meta,
    };
    Ok((model, history))
}
