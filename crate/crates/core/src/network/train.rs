//! Mini-batch SGD with momentum on the softmax cross-entropy loss.
//!
//! Per-sample gradients are summed in fixed groups, and groups are summed
//! in index order, so results do not depend on the number of worker
//! threads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{self, record};
use super::spec::NetworkSpec;
use super::weights::NetworkWeights;
use crate::error::{Error, Result};
use crate::tensor::{GradientTape, Tensor};

/// Samples per fixed gradient-summation group.
const GROUP: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
}

/// Learning-rate schedule over epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` towards 0, stepped once per epoch.
    #[default]
    Cosine,
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f32 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let t = epoch as f64 / self.epochs.max(1) as f64;
                (f64::from(self.lr) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            epochs: 12,
            batch_size: 16,
            seed: 1,
            schedule: LrSchedule::Cosine,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of samples whose argmax matched the label during the epoch
    /// (measured before each batch's update).
    pub running_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    pub epoch_losses: Vec<f64>,
}

pub fn train(spec: &NetworkSpec, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(spec, NetworkWeights::init(spec, cfg.seed), samples, cfg, |_| {})
}

/// Trains from `init`, reporting after every epoch.
pub fn train_with(
    spec: &NetworkSpec,
    init: NetworkWeights,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    if !cfg.lr.is_finite() || cfg.lr < 0.0 || !cfg.momentum.is_finite() {
        return Err(Error::InvalidArgument("lr and momentum must be finite, lr >= 0".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.label >= spec.class_count() {
            return Err(Error::Dataset(format!(
                "sample {i} has label {} but the network has {} classes",
                s.label,
                spec.class_count()
            )));
        }
        forward::check_input(spec, &s.image)?;
    }
    init.validate(spec)?;

    let mut weights = init;
    let mut velocity: Vec<Vec<f32>> = flat_params(&weights).iter().map(|p| vec![0.0; p.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let groups: Vec<GroupResult> = batch
                .par_chunks(GROUP)
                .map(|group| group_gradients(spec, &weights, samples, group))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Divergence { epoch, batch: batch_no },
                    e => e,
                })?;
            let mut total = groups.into_iter();
            let mut acc = total.next().expect("non-empty batch");
            for g in total {
                acc.merge(g);
            }
            if !acc.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_no,
                });
            }
            loss_sum += acc.loss;
            correct += acc.correct;

            let scale = 1.0 / batch.len() as f32;
            let mut params = flat_params_mut(&mut weights);
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&acc.grads) {
                let data = p.data_mut();
                for ((w, v), &g) in data.iter_mut().zip(v.iter_mut()).zip(g) {
                    let grad = g * scale + cfg.weight_decay * *w;
                    *v = cfg.momentum * *v + grad;
                    *w -= lr * *v;
                }
                if data.iter().any(|w| !w.is_finite()) {
                    return Err(Error::Divergence {
                        epoch,
                        batch: batch_no,
                    });
                }
            }
        }
        let mean_loss = loss_sum / samples.len() as f64;
        epoch_losses.push(mean_loss);
        on_epoch(&EpochStats {
            epoch,
            mean_loss,
            running_accuracy: correct as f64 / samples.len() as f64,
        });
    }
    Ok(TrainOutcome {
        weights,
        epoch_losses,
    })
}

struct GroupResult {
    loss: f64,
    correct: usize,
    grads: Vec<Vec<f32>>,
}

impl GroupResult {
    fn merge(&mut self, other: GroupResult) {
        self.loss += other.loss;
        self.correct += other.correct;
        for (a, b) in self.grads.iter_mut().zip(other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

fn group_gradients(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    samples: &[Sample],
    group: &[usize],
) -> Result<GroupResult> {
    let mut acc: Option<GroupResult> = None;
    for &i in group {
        let (loss, correct, grads) = sample_gradients(spec, weights, &samples[i])?;
        let r = GroupResult {
            loss,
            correct: usize::from(correct),
            grads,
        };
        match acc.as_mut() {
            Some(a) => a.merge(r),
            None => acc = Some(r),
        }
    }
    Ok(acc.expect("non-empty group"))
}

/// Cross-entropy loss, whether the prediction was right, and parameter
/// gradients (weight, bias per learnable layer) for one sample.
fn sample_gradients(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    sample: &Sample,
) -> Result<(f64, bool, Vec<Vec<f32>>)> {
    let mut tape = GradientTape::new();
    let rec = record(&mut tape, spec, weights, sample.image.clone(), false, true)?;
    let correct = tape.value(rec.logits)?.argmax() == sample.label;
    let loss_node = tape.cross_entropy(rec.logits, sample.label)?;
    let loss = f64::from(tape.value(loss_node)?.data()[0]);
    let mut grads = tape.backward(loss_node)?;
    let mut out = Vec::with_capacity(2 * rec.params.len());
    for &(w, b) in &rec.params {
        for id in [w, b] {
            let len = tape.value(id)?.len();
            out.push(grads.take(id).map(Tensor::into_data).unwrap_or_else(|| vec![0.0; len]));
        }
    }
    Ok((loss, correct, out))
}

/// Mean cross-entropy and per-parameter gradients averaged over `samples`,
/// computed serially. Used by gradient checks and diagnostics.
pub fn loss_and_gradients(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    samples: &[Sample],
) -> Result<(f64, Vec<Tensor>)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let idx: Vec<usize> = (0..samples.len()).collect();
    let r = group_gradients(spec, weights, samples, &idx)?;
    let n = samples.len() as f32;
    let shapes = flat_params(weights);
    let grads = r
        .grads
        .into_iter()
        .zip(shapes)
        .map(|(g, p)| Tensor::new(p.shape().to_vec(), g.into_iter().map(|v| v / n).collect()))
        .collect::<Result<_>>()?;
    Ok((r.loss / samples.len() as f64, grads))
}

/// Fraction of samples whose top-1 prediction equals the label.
pub fn accuracy(spec: &NetworkSpec, weights: &NetworkWeights, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = samples
        .par_iter()
        .map(|s| forward::forward(spec, weights, &s.image).map(|p| usize::from(p.argmax() == s.label)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / samples.len() as f64)
}

fn flat_params(weights: &NetworkWeights) -> Vec<&Tensor> {
    weights
        .layers()
        .iter()
        .flat_map(|(_, p)| [&p.weight, &p.bias])
        .collect()
}

fn flat_params_mut(weights: &mut NetworkWeights) -> Vec<&mut Tensor> {
    weights
        .layers_mut()
        .iter_mut()
        .flat_map(|(_, p)| [&mut p.weight, &mut p.bias])
        .collect()
}
