#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use resfgb::boost::{ModelMeta, ResFGBModel, ResidualLayer};
use resfgb::dataio::{Dataset, Standardizer};
use resfgb::embed::{init_embedding, EmbedConfig};
use resfgb::linopt::LinearModel;
use resfgb::{LossKind, TrainConfig};

/// Two isotropic unit-variance Gaussians centred at `(±4, 0)`: the 3σ discs
/// around the centres are separated by a 2σ gap. Alternating labels.
pub fn blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let cx = if label == 0 { -4.0 } else { 4.0 };
        x[[i, 0]] = cx + normal.sample(&mut rng);
        x[[i, 1]] = normal.sample(&mut rng);
        y.push(label);
    }
    Dataset::new(x, y, 2).unwrap()
}

/// Uniform features in `[-2, 2]` with every class present.
pub fn random_dataset(rng: &mut StdRng, n: usize, d: usize, c: usize) -> Dataset {
    let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-2.0..2.0));
    let y = (0..n)
        .map(|i| if i < c { i } else { rng.random_range(0..c) })
        .collect();
    Dataset::new(x, y, c).unwrap()
}

/// A model with random standardiser, 0–3 random residual layers and a random
/// head whose scale spans confident and uncertain regimes.
pub fn random_model(rng: &mut StdRng, d: usize, c: usize) -> ResFGBModel {
    let standardizer = rng.random_bool(0.5).then(|| Standardizer {
        mean: Array1::from_shape_simple_fn(d, || rng.random_range(-1.0..1.0)),
        scale: Array1::from_shape_simple_fn(d, || rng.random_range(0.5..2.0)),
    });
    let n_layers = rng.random_range(0..4);
    let layers = (0..n_layers)
        .map(|_| {
            let cfg = EmbedConfig {
                hidden: vec![rng.random_range(1..6); rng.random_range(0..3)],
                seed: rng.random(),
                project_unit_ball: rng.random_bool(0.5),
                ..EmbedConfig::default()
            };
            ResidualLayer {
                a: Array2::from_shape_simple_fn((d, d), || rng.random_range(-1.0..1.0)),
                eta: rng.random_range(0.01..1.0),
                embedding: init_embedding(d, d, &cfg).unwrap(),
            }
        })
        .collect();
    let scale = 10f64.powf(rng.random_range(-2.0..1.5));
    let w = Array2::from_shape_simple_fn((d, c), || scale * rng.random_range(-1.0..1.0));
    ResFGBModel {
        standardizer,
        layers,
        linear: LinearModel { w, lambda: 0.01 },
        loss: LossKind::Logistic,
        label_values: (0..c as i64).collect(),
        meta: ModelMeta {
            config: TrainConfig::default(),
            selected_round: n_layers,
            rounds_completed: n_layers,
            subset_size: None,
            unused_samples: None,
            crate_version: String::new(),
        },
    }
}

/// Copies some rows over others so that identical inputs carry different labels.
pub fn with_duplicates(rng: &mut StdRng, ds: &Dataset) -> Dataset {
    let mut x = ds.features().to_owned();
    let n = ds.n();
    for _ in 0..n / 4 {
        let (src, dst) = (rng.random_range(0..n), rng.random_range(0..n));
        let row = x.row(src).to_owned();
        x.row_mut(dst).assign(&row);
    }
    Dataset::new(x, ds.labels().to_vec(), ds.c()).unwrap()
}

pub fn bits(a: &Array2<f64>) -> Vec<u64> {
    a.iter().map(|v| v.to_bits()).collect()
}
