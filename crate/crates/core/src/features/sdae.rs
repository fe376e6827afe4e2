//! Stacked denoising autoencoder trained greedily, one layer at a time.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Dense, SlotAllocator};
use crate::nn::train::Adam;
use crate::nn::Activation;

pub const SDAE_INPUT: usize = 20;
pub const SDAE_HIDDEN: usize = 50;
pub const SDAE_CODE: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdaeConfig {
    /// Fraction of inputs zeroed during training.
    pub mask_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for SdaeConfig {
    fn default() -> Self {
        SdaeConfig {
            mask_fraction: 0.1,
            epochs: 40,
            batch_size: 64,
            learning_rate: 0.005,
        }
    }
}

/// One autoencoder: tanh encoder, linear decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaeLayer {
    pub inputs: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

struct DaeNet {
    encoder: Dense,
    decoder: Dense,
    n_params: usize,
}

impl DaeNet {
    fn new(inputs: usize, hidden: usize) -> (Self, SlotAllocator) {
        let mut alloc = SlotAllocator::default();
        let encoder = Dense::new(&mut alloc, "encoder", inputs, hidden, Activation::Tanh);
        let decoder = Dense::new(&mut alloc, "decoder", hidden, inputs, Activation::Linear);
        let n_params = alloc.next;
        (DaeNet { encoder, decoder, n_params }, alloc)
    }
}

impl DaeLayer {
    pub fn encode(&self, v: &[f64]) -> Vec<f64> {
        let (net, _) = DaeNet::new(self.inputs, self.hidden);
        net.encoder.forward(&self.params, v.to_vec()).out
    }

    pub fn reconstruct(&self, v: &[f64]) -> Vec<f64> {
        let (net, _) = DaeNet::new(self.inputs, self.hidden);
        let h = net.encoder.forward(&self.params, v.to_vec()).out;
        net.decoder.forward(&self.params, h).out
    }

    /// Mean squared reconstruction error of clean inputs.
    pub fn reconstruction_mse(&self, data: &[Vec<f64>]) -> f64 {
        let total: f64 = data
            .iter()
            .map(|v| self.reconstruct(v).iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        total / (data.len() * self.inputs) as f64
    }
}

fn initial_layer(inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> DaeLayer {
    let (_, alloc) = DaeNet::new(inputs, hidden);
    DaeLayer {
        inputs,
        hidden,
        params: alloc.initialise(rng),
    }
}

fn train_layer(data: &[Vec<f64>], hidden: usize, cfg: &SdaeConfig, rng: &mut ChaCha8Rng) -> Result<DaeLayer> {
    let inputs = data[0].len();
    let mut layer = initial_layer(inputs, hidden, rng);
    let (net, _) = DaeNet::new(inputs, hidden);
    let mut adam = Adam::new(net.n_params, cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut grads = vec![0.0; net.n_params];
            let scale = 1.0 / (batch.len() * inputs) as f64;
            for &i in batch {
                let clean = &data[i];
                let noisy: Vec<f64> =
                    clean.iter().map(|&v| if rng.random::<f64>() < cfg.mask_fraction { 0.0 } else { v }).collect();
                let enc = net.encoder.forward(&layer.params, noisy);
                let dec = net.decoder.forward(&layer.params, enc.out.clone());
                let d_out: Vec<f64> = dec.out.iter().zip(clean).map(|(a, b)| 2.0 * (a - b) * scale).collect();
                epoch_loss += dec.out.iter().zip(clean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                let d_h = net.decoder.backward(&layer.params, &dec, &d_out, &mut grads);
                net.encoder.backward(&layer.params, &enc, &d_h, &mut grads);
            }
            adam.step(&mut layer.params, &grads);
        }
        epoch_loss /= (data.len() * inputs) as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: epoch_loss });
        }
        log::debug!("dae {inputs}-{hidden}-{inputs} epoch {epoch}: loss {epoch_loss:.6}");
    }
    Ok(layer)
}

/// Two stacked autoencoders, 20-50-20 and 50-25-50.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdaeModel {
    pub layer1: DaeLayer,
    pub layer2: DaeLayer,
    pub config: SdaeConfig,
    pub seed: u64,
}

impl SdaeModel {
    /// Greedy training: the first autoencoder on masked inputs, the second
    /// on the first encoder's outputs for the clean inputs.
    pub fn train(inputs: &[Vec<f64>], cfg: &SdaeConfig, seed: u64) -> Result<SdaeModel> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(bad) = inputs.iter().find(|v| v.len() != SDAE_INPUT) {
            return Err(Error::Shape {
                expected: SDAE_INPUT.to_string(),
                got: bad.len().to_string(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer1 = train_layer(inputs, SDAE_HIDDEN, cfg, &mut rng)?;
        let codes: Vec<Vec<f64>> = inputs.iter().map(|v| layer1.encode(v)).collect();
        let layer2 = train_layer(&codes, SDAE_CODE, cfg, &mut rng)?;
        Ok(SdaeModel {
            layer1,
            layer2,
            config: cfg.clone(),
            seed,
        })
    }

    /// Untrained model with the initial weights `train` would start from.
    pub fn untrained(cfg: &SdaeConfig, seed: u64) -> SdaeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SdaeModel {
            layer1: initial_layer(SDAE_INPUT, SDAE_HIDDEN, &mut rng),
            layer2: initial_layer(SDAE_HIDDEN, SDAE_CODE, &mut rng),
            config: cfg.clone(),
            seed,
        }
    }

    pub fn encode(&self, v: &[f64]) -> Result<[f64; SDAE_CODE]> {
        if v.len() != SDAE_INPUT {
            return Err(Error::Shape {
                expected: SDAE_INPUT.to_string(),
                got: v.len().to_string(),
            });
        }
        let code = self.layer2.encode(&self.layer1.encode(v));
        let mut out = [0.0; SDAE_CODE];
        out.copy_from_slice(&code);
        Ok(out)
    }
}
