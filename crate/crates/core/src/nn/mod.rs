//! Small reverse-mode model engine for the substitute and target
//! regressors.
//!
//! Models map a `steps x channels` window to one RUL value. Gradients are
//! available with respect to both parameters and inputs; the attacks only
//! need the latter.

pub(crate) mod layers;
mod network;
pub(crate) mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use layers::{Activation, Slot};
pub use network::{Architecture, ConvConfig, ModelSpec, Network, Trace, DEFAULT_WIDTH_SCALE};
pub use train::{fine_tune, train, EpochLog, TrainConfig};

use crate::data::{Window, WindowedSample};
use crate::error::{Error, Result};

/// Anything that predicts RUL from a window and exposes the input gradient
/// of its squared error.
pub trait Regressor: Sync {
    fn input_dims(&self) -> (usize, usize);

    fn predict_window(&self, x: &Window) -> f64;

    /// `((f(x) - y)^2, d/dx (f(x) - y)^2)`.
    fn loss_and_input_gradient(&self, x: &Window, y: f64) -> (f64, Vec<f64>);

    fn predict_all(&self, samples: &[WindowedSample]) -> Vec<f64> {
        samples.iter().map(|s| self.predict_window(&s.window)).collect()
    }
}

/// Architecture, parameters and training provenance. The prediction is
/// `target_offset + target_scale * network(x)`; offset and scale are fixed
/// from the training targets on first training and never optimised.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub steps: usize,
    pub channels: usize,
    pub seed: u64,
    pub target_offset: f64,
    pub target_scale: f64,
    pub params: Vec<f64>,
    pub history: Vec<EpochLog>,
    #[serde(skip)]
    network: Option<Network>,
}

impl PartialEq for TrainedModel {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.steps == other.steps
            && self.channels == other.channels
            && self.seed == other.seed
            && self.target_offset.to_bits() == other.target_offset.to_bits()
            && self.target_scale.to_bits() == other.target_scale.to_bits()
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.history == other.history
    }
}

/// Loss plus gradients for a batch.
#[derive(Debug, Clone)]
pub struct GradientResult {
    pub loss: f64,
    /// Flat, laid out like [`TrainedModel::params`].
    pub param_grads: Vec<f64>,
    /// One gradient per input window, same shape as the window.
    pub input_grads: Vec<Window>,
}

/// Deterministic Glorot-uniform initialisation.
pub fn build_model(spec: &ModelSpec, steps: usize, channels: usize, seed: u64) -> Result<TrainedModel> {
    let network = Network::build(spec, steps, channels)?;
    let params = network.initialise(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(TrainedModel {
        spec: spec.clone(),
        steps,
        channels,
        seed,
        target_offset: 0.0,
        target_scale: 1.0,
        params,
        history: Vec::new(),
        network: Some(network),
    })
}

impl TrainedModel {
    pub fn network(&self) -> &Network {
        self.network.as_ref().expect("network is rebuilt on construction and load")
    }

    pub fn architecture(&self) -> Architecture {
        self.spec.architecture
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn check_window(&self, x: &Window) -> Result<()> {
        if x.steps != self.steps || x.channels != self.channels {
            return Err(Error::Shape {
                expected: format!("{}x{}", self.steps, self.channels),
                got: format!("{}x{}", x.steps, x.channels),
            });
        }
        Ok(())
    }

    fn raw_predict(&self, x: &Window) -> f64 {
        self.target_offset + self.target_scale * self.network().predict(&self.params, &x.data)
    }

    /// Inference-mode predictions (dropout inactive), one per window.
    pub fn forward(&self, batch: &[Window]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|x| {
                self.check_window(x)?;
                Ok(self.raw_predict(x))
            })
            .collect()
    }

    /// Mean-squared-error loss with gradients for parameters and inputs.
    pub fn backward(&self, batch: &[Window], targets: &[f64]) -> Result<GradientResult> {
        if batch.len() != targets.len() || batch.is_empty() {
            return Err(Error::Shape {
                expected: format!("{} targets", batch.len()),
                got: targets.len().to_string(),
            });
        }
        let n = batch.len() as f64;
        let net = self.network();
        let mut param_grads = vec![0.0; self.params.len()];
        let mut input_grads = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        for (x, &y) in batch.iter().zip(targets) {
            self.check_window(x)?;
            let tr = net.forward(&self.params, &x.data, None);
            let pred = self.target_offset + self.target_scale * tr.prediction();
            let r = pred - y;
            loss += r * r / n;
            let d = net.backward(&self.params, &tr, 2.0 * r / n * self.target_scale, &mut param_grads);
            input_grads.push(Window::new(x.steps, x.channels, d));
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                context: "backward".into(),
            });
        }
        Ok(GradientResult {
            loss,
            param_grads,
            input_grads,
        })
    }

    /// RUL predictions; `clamp` floors them at zero for reporting.
    pub fn predict_rul(&self, samples: &[WindowedSample], clamp: bool) -> Result<Vec<f64>> {
        samples
            .iter()
            .map(|s| {
                self.check_window(&s.window)?;
                let p = self.raw_predict(&s.window);
                Ok(if clamp { p.max(0.0) } else { p })
            })
            .collect()
    }

    /// Rebuilds the network after deserialisation and checks the parameter
    /// count.
    fn attach_network(mut self) -> Result<Self> {
        let net = Network::build(&self.spec, self.steps, self.channels)?;
        if net.n_params != self.params.len() {
            return Err(Error::Shape {
                expected: format!("{} parameters", net.n_params),
                got: self.params.len().to_string(),
            });
        }
        self.network = Some(net);
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        let file = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            model: self,
        };
        serde_json::to_string(&file).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointOwned = serde_json::from_str(text).map_err(|e| Error::format("<checkpoint>", e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "<checkpoint>",
                format!("unsupported checkpoint {} v{}", file.format, file.version),
            ));
        }
        file.model.attach_network()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format { msg, .. } => Error::format(path, msg),
            other => other,
        })
    }
}

const CHECKPOINT_FORMAT: &str = "dodem-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    model: &'a TrainedModel,
}

#[derive(Deserialize)]
struct CheckpointOwned {
    format: String,
    version: u32,
    model: TrainedModel,
}

impl Regressor for TrainedModel {
    fn input_dims(&self) -> (usize, usize) {
        (self.steps, self.channels)
    }

    fn predict_window(&self, x: &Window) -> f64 {
        self.raw_predict(x)
    }

    fn loss_and_input_gradient(&self, x: &Window, y: f64) -> (f64, Vec<f64>) {
        let net = self.network();
        let tr = net.forward(&self.params, &x.data, None);
        let r = self.target_offset + self.target_scale * tr.prediction() - y;
        // Parameter gradients are discarded; the buffer is scratch space.
        let mut scratch = vec![0.0; self.params.len()];
        let d = net.backward(&self.params, &tr, 2.0 * r * self.target_scale, &mut scratch);
        (r * r, d)
    }
}

/// A set of models whose prediction is the unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub models: Vec<TrainedModel>,
}

impl ModelSet {
    pub fn new(models: Vec<TrainedModel>) -> Self {
        assert!(!models.is_empty(), "model set must not be empty");
        ModelSet { models }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Per-model predictions for one window.
    pub fn predict_each(&self, x: &Window) -> Vec<f64> {
        self.models.iter().map(|m| m.predict_window(x)).collect()
    }
}

impl Regressor for ModelSet {
    fn input_dims(&self) -> (usize, usize) {
        self.models[0].input_dims()
    }

    fn predict_window(&self, x: &Window) -> f64 {
        self.predict_each(x).iter().sum::<f64>() / self.models.len() as f64
    }

    fn loss_and_input_gradient(&self, x: &Window, y: f64) -> (f64, Vec<f64>) {
        let k = self.models.len() as f64;
        let mut pred = 0.0;
        let mut dpred = vec![0.0; x.data.len()];
        for m in &self.models {
            let net = m.network();
            let tr = net.forward(&m.params, &x.data, None);
            pred += (m.target_offset + m.target_scale * tr.prediction()) / k;
            let mut scratch = vec![0.0; m.params.len()];
            let d = net.backward(&m.params, &tr, m.target_scale / k, &mut scratch);
            dpred.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
        let r = pred - y;
        dpred.iter_mut().for_each(|v| *v *= 2.0 * r);
        (r * r, dpred)
    }
}

#[cfg(test)]
mod tests;
