//! Client-side local training and global evaluation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClientShard, FederatedDataset, Samples};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::strategy::Update;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// Client learning rate before decay.
    pub eta_c: f64,
    /// Per-round multiplicative learning-rate decay, indexed by birth round.
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self { eta_c: 0.01, decay: 0.999, epochs: 5, batch_size: 64 }
    }
}

impl TrainerConfig {
    pub fn learning_rate(&self, round: u64) -> f64 {
        self.eta_c * self.decay.powf(round as f64)
    }

    /// Local SGD steps for a shard of `volume` samples.
    pub fn local_steps(&self, volume: usize) -> usize {
        self.epochs * volume.div_ceil(self.batch_size)
    }
}

/// Runs `epochs` passes of shuffled mini-batch SGD starting from `model`.
///
/// The returned update carries the pseudo-gradient `model - trained`, the
/// shard volume and `round` as its birth round. Cluster id and arrival time
/// are left for the dispatcher to stamp.
pub fn local_train<R: Rng + ?Sized>(
    arch: &Architecture,
    model: &ModelParams,
    shard: &ClientShard,
    cfg: &TrainerConfig,
    round: u64,
    rng: &mut R,
) -> Result<Update> {
    let volume = shard.volume();
    if volume == 0 {
        return Err(Error::EmptyShard(shard.client_id));
    }
    if model.dim() != arch.param_count() {
        return Err(Error::Dimension { expected: arch.param_count(), got: model.dim() });
    }
    if shard.samples.feature_dim != arch.features() {
        return Err(Error::Dimension { expected: arch.features(), got: shard.samples.feature_dim });
    }
    if !model.is_finite() {
        return Err(Error::Numeric { client: shard.client_id, step: 0 });
    }

    let lr = cfg.learning_rate(round);
    let mut weights = model.clone();
    let mut grad = vec![0.0; arch.param_count()];
    let mut order: Vec<usize> = (0..volume).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let loss = arch.loss_and_grad(weights.as_slice(), &shard.samples, batch, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric { client: shard.client_id, step });
            }
            for (w, g) in weights.as_mut_slice().iter_mut().zip(&grad) {
                *w -= lr * g;
            }
            step += 1;
        }
    }

    let delta = model.sub(&weights);
    if !delta.is_finite() {
        return Err(Error::Numeric { client: shard.client_id, step });
    }
    Ok(Update::new(shard.client_id, delta, volume, round))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Accuracy and mean cross-entropy of `model` on a sample set.
pub fn evaluate_on(arch: &Architecture, model: &ModelParams, samples: &Samples) -> Evaluation {
    if samples.is_empty() {
        return Evaluation { accuracy: 0.0, loss: 0.0 };
    }
    let params = model.as_slice();
    let correct = (0..samples.len())
        .filter(|&i| arch.predict(params, samples.row(i)) == samples.labels[i])
        .count();
    let all: Vec<usize> = (0..samples.len()).collect();
    Evaluation {
        accuracy: correct as f64 / samples.len() as f64,
        loss: arch.loss(params, samples, &all),
    }
}

/// Evaluates on the dataset's global held-out split.
pub fn evaluate(arch: &Architecture, model: &ModelParams, dataset: &FederatedDataset) -> Evaluation {
    evaluate_on(arch, model, &dataset.test)
}
