use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainedModel;
use crate::data::WindowedSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 128,
            max_epochs: 150,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub(crate) struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub(crate) fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

fn mse(model: &TrainedModel, samples: &[WindowedSample]) -> f64 {
    let n = samples.len() as f64;
    samples
        .iter()
        .map(|s| {
            let r = model.target_offset + model.target_scale * model.network().predict(&model.params, &s.window.data) - s.rul;
            r * r
        })
        .sum::<f64>()
        / n
}

/// One pass over `data` in shuffled mini-batches. Returns the mean batch loss.
fn run_epoch(model: &mut TrainedModel, data: &[WindowedSample], cfg: &TrainConfig, adam: &mut Adam, rng: &mut ChaCha8Rng) -> f64 {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let net = model.network.take().expect("network attached");
    let dropout = model.spec.dropout;
    let mask_width = if dropout > 0.0 { net.dropout_width() } else { None };
    let keep_scale = 1.0 / (1.0 - dropout);
    let mut grads = vec![0.0; model.params.len()];
    let mut total = 0.0;
    for batch in order.chunks(cfg.batch_size.max(1)) {
        grads.iter_mut().for_each(|g| *g = 0.0);
        let b = batch.len() as f64;
        for &i in batch {
            let s = &data[i];
            let mask: Option<Vec<f64>> = mask_width.map(|w| {
                (0..w)
                    .map(|_| if rng.random::<f64>() < dropout { 0.0 } else { keep_scale })
                    .collect()
            });
            let tr = net.forward(&model.params, &s.window.data, mask.as_deref());
            let r = model.target_offset + model.target_scale * tr.prediction() - s.rul;
            total += r * r;
            net.backward(&model.params, &tr, 2.0 * r / b * model.target_scale, &mut grads);
        }
        adam.step(&mut model.params, &grads);
    }
    model.network = Some(net);
    total / data.len() as f64
}

fn set_target_scaling(model: &mut TrainedModel, data: &[WindowedSample]) {
    let n = data.len() as f64;
    let mean = data.iter().map(|s| s.rul).sum::<f64>() / n;
    let var = data.iter().map(|s| (s.rul - mean).powi(2)).sum::<f64>() / n;
    model.target_offset = mean;
    model.target_scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
}

/// Adam on mean-squared error with early stopping on validation loss.
///
/// Training stops once validation loss has failed to improve for
/// `max(patience, 1)` consecutive epochs; the returned model carries the
/// parameters of the best validation epoch. A model with no history gets
/// its output offset and scale from the training targets first.
pub fn train(
    model: &TrainedModel,
    train_set: &[WindowedSample],
    val_set: &[WindowedSample],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Precondition("training and validation sets must be non-empty".into()));
    }
    let mut m = model.clone();
    if m.history.is_empty() {
        set_target_scaling(&mut m, train_set);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(m.seed ^ 0x5eed_7a11);
    let mut adam = Adam::new(m.params.len(), cfg.learning_rate);
    let first_epoch = m.history.len();
    let mut best = (f64::INFINITY, m.params.clone());
    let mut bad = 0usize;
    let limit = cfg.patience.max(1);
    for e in 0..cfg.max_epochs {
        let epoch = first_epoch + e;
        let train_loss = run_epoch(&mut m, train_set, cfg, &mut adam, &mut rng);
        let val_loss = mse(&m, val_set);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: if train_loss.is_finite() { val_loss } else { train_loss },
            });
        }
        m.history.push(EpochLog {
            epoch,
            train_loss,
            val_loss: Some(val_loss),
        });
        log::debug!("{} epoch {epoch}: train {train_loss:.4} val {val_loss:.4}", m.spec.architecture);
        if val_loss < best.0 {
            best = (val_loss, m.params.clone());
            bad = 0;
        } else {
            bad += 1;
            if bad >= limit {
                break;
            }
        }
    }
    m.params = best.1;
    Ok(m)
}

/// Continues training for exactly `epochs` epochs without early stopping,
/// keeping the model's output scaling. Used for warm-start retraining.
pub fn fine_tune(model: &TrainedModel, data: &[WindowedSample], epochs: usize, cfg: &TrainConfig) -> Result<TrainedModel> {
    if data.is_empty() {
        return Err(Error::Precondition("fine-tuning set must be non-empty".into()));
    }
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(m.seed ^ 0xf1e7_u64 ^ (m.history.len() as u64) << 20);
    let mut adam = Adam::new(m.params.len(), cfg.learning_rate);
    for _ in 0..epochs {
        let epoch = m.history.len();
        let train_loss = run_epoch(&mut m, data, cfg, &mut adam, &mut rng);
        if !train_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: train_loss });
        }
        m.history.push(EpochLog {
            epoch,
            train_loss,
            val_loss: None,
        });
    }
    Ok(m)
}
