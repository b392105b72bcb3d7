//! Adagrad mini-batch training with seeded shuffling.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geodata::PatchSet;
use crate::layers::Parameter;
use crate::ops;
use crate::tensor::{Precision, Real};
use crate::zoo::Model;

pub const ADAGRAD_EPS: f64 = 1e-7;
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    /// `epoch,loss,accuracy,seconds` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,accuracy,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:.6},{:.6},{:.3}\n", e.epoch, e.loss, e.accuracy, e.seconds));
        }
        out
    }
}

/// One Adagrad update. Non-trainable parameters are left alone.
pub fn adagrad_step<T: Real>(param: &mut Parameter<T>, lr: f64, eps: f64) -> Result<()> {
    if !param.trainable {
        return Ok(());
    }
    if !param.grad.all_finite() {
        return Err(Error::Numeric(format!("non-finite gradient in {}", param.name)));
    }
    let (lr, eps) = (T::lit(lr), T::lit(eps));
    let grad = param.grad.data();
    let acc = param.accum.data_mut();
    for (a, &g) in acc.iter_mut().zip(grad) {
        *a = *a + g * g;
    }
    let acc = param.accum.data();
    for ((v, &g), &a) in param.value.data_mut().iter_mut().zip(grad).zip(acc) {
        *v = *v - lr * g / (a.sqrt() + eps);
    }
    Ok(())
}

/// Seed of the shuffle for one epoch; the permutation depends only on
/// `(seed, epoch)`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed.wrapping_add((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
    order
}

pub fn train<T: Real>(model: &mut Model<T>, data: &PatchSet, config: &TrainConfig) -> Result<TrainHistory> {
    train_with(model, data, config, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with<T: Real>(
    model: &mut Model<T>,
    data: &PatchSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainHistory> {
    config.validate()?;
    let arch = model.arch();
    if data.bands != arch.bands() || data.patch != arch.patch() {
        return Err(Error::dim(
            "training patches",
            &[data.patch, data.patch, data.bands],
            &[arch.patch(), arch.patch(), arch.bands()],
        ));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= arch.classes()) {
        return Err(Error::Index {
            what: "class label",
            index: bad,
            bound: arch.classes(),
        });
    }
    if data.is_empty() {
        return Err(Error::Argument("no training patches".into()));
    }
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let order = epoch_order(data.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let (x, labels) = data.batch::<T>(idx)?;
            let (loss, logits) = model.loss_and_grad(&x, &labels)?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {} batch {b}", epoch + 1)));
            }
            loss_sum += loss * idx.len() as f64;
            let k = logits.channels();
            correct += logits
                .data()
                .chunks_exact(k)
                .zip(&labels)
                .filter(|(row, &l)| ops::argmax(row) == l)
                .count();
            for p in model.params_mut() {
                adagrad_step(p, config.learning_rate, ADAGRAD_EPS).map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("{msg} at epoch {} batch {b}", epoch + 1)),
                    e => e,
                })?;
            }
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} loss {:.4} train accuracy {:.4} ({:.1}s)",
            stats.epoch,
            stats.loss,
            stats.accuracy,
            stats.seconds
        );
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(history)
}
