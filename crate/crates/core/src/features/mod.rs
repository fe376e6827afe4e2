//! The 37-dimensional detection feature vector.
//!
//! Statistical and chaos features are computed on a single aggregate signal
//! per window (the per-timestep mean of the selected channels). The learned
//! part is the 25-wide code of a stacked denoising autoencoder fed with 20
//! per-window channel summaries.

pub mod chaos;
pub mod sdae;
pub mod stats;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use chaos::{
    box_ladder, chaos_features, dfa_exponent, hurst_exponent, lyapunov_largest, sample_entropy, ChaosConfig,
    CHAOS_NAMES,
};
pub use sdae::{DaeLayer, SdaeConfig, SdaeModel, SDAE_CODE, SDAE_HIDDEN, SDAE_INPUT};
pub use stats::{stat_features, STAT_NAMES};

use crate::data::{Window, WindowedSample};
use crate::error::{Error, Result};

pub const FEATURE_DIM: usize = 37;

pub fn feature_names() -> Vec<String> {
    STAT_NAMES
        .iter()
        .chain(CHAOS_NAMES.iter())
        .map(|s| s.to_string())
        .chain((0..SDAE_CODE).map(|i| format!("sdae_{i:02}")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn stat(&self) -> &[f64] {
        &self.0[..8]
    }

    pub fn chaos(&self) -> &[f64] {
        &self.0[8..12]
    }

    pub fn learned(&self) -> &[f64] {
        &self.0[12..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-timestep mean of the listed channels.
pub fn aggregate_signal(w: &Window, channels: &[usize]) -> Result<Vec<f64>> {
    if channels.is_empty() {
        return Err(Error::Precondition("aggregate signal needs at least one channel".into()));
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= w.channels) {
        return Err(Error::Precondition(format!("channel {c} out of range for {} channels", w.channels)));
    }
    let k = channels.len() as f64;
    Ok((0..w.steps).map(|t| channels.iter().map(|&c| w.get(t, c)).sum::<f64>() / k).collect())
}

/// The 20 autoencoder inputs: per-window means of the first 20 listed
/// channels. With fewer channels the remaining slots take per-window
/// standard deviations of the same channels, then zeros.
pub fn sdae_input(w: &Window, channels: &[usize]) -> Vec<f64> {
    let mut out: Vec<f64> = channels.iter().take(SDAE_INPUT).map(|&c| stats::mean(&w.column(c))).collect();
    for &c in channels {
        if out.len() == SDAE_INPUT {
            break;
        }
        out.push(stats::std_pop(&w.column(c)));
    }
    out.resize(SDAE_INPUT, 0.0);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Channels averaged into the aggregate signal.
    pub channels: Vec<usize>,
    /// Channels summarised for the autoencoder; empty means `channels`.
    pub sdae_channels: Vec<usize>,
    pub chaos: ChaosConfig,
    pub sdae: SdaeConfig,
}

impl FeatureConfig {
    pub fn new(channels: Vec<usize>) -> Self {
        FeatureConfig {
            channels,
            sdae_channels: Vec::new(),
            chaos: ChaosConfig::default(),
            sdae: SdaeConfig::default(),
        }
    }

    fn sdae_channels(&self) -> &[usize] {
        if self.sdae_channels.is_empty() {
            &self.channels
        } else {
            &self.sdae_channels
        }
    }
}

/// Feature configuration plus the trained autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub config: FeatureConfig,
    pub sdae: SdaeModel,
}

impl FeaturePipeline {
    pub fn fit(train: &[WindowedSample], config: FeatureConfig, seed: u64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput);
        }
        let inputs: Vec<Vec<f64>> = train.iter().map(|s| sdae_input(&s.window, config.sdae_channels())).collect();
        let sdae = SdaeModel::train(&inputs, &config.sdae, seed)?;
        Ok(FeaturePipeline { config, sdae })
    }

    pub fn featurize(&self, w: &Window) -> Result<FeatureVector> {
        let signal = aggregate_signal(w, &self.config.channels)?;
        let mut out = [0.0; FEATURE_DIM];
        out[..8].copy_from_slice(&stat_features(&signal)?);
        out[8..12].copy_from_slice(&chaos_features(&signal, &self.config.chaos)?);
        out[12..].copy_from_slice(&self.sdae.encode(&sdae_input(w, self.config.sdae_channels()))?);
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Undefined(format!("feature {} is not finite", feature_names()[i])));
        }
        Ok(FeatureVector(out))
    }

    pub fn featurize_all(&self, samples: &[WindowedSample]) -> Result<Vec<FeatureVector>> {
        samples.iter().map(|s| self.featurize(&s.window)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Construction(e.to_string()))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))
    }
}

/// Feature matrix as CSV: 37 named columns, then `unit_id`, `end_cycle` and
/// `attack_mask`.
pub fn feature_csv(samples: &[WindowedSample], features: &[FeatureVector], mask: &[bool]) -> Result<String> {
    if samples.len() != features.len() || samples.len() != mask.len() {
        return Err(Error::Shape {
            expected: format!("{} rows", samples.len()),
            got: format!("{} features, {} mask entries", features.len(), mask.len()),
        });
    }
    let mut out = feature_names().join(",");
    out.push_str(",unit_id,end_cycle,attack_mask\n");
    for ((s, f), &m) in samples.iter().zip(features).zip(mask) {
        for v in f.0 {
            write!(out, "{v:?},").unwrap();
        }
        writeln!(out, "{},{},{}", s.unit_id, s.end_cycle, u8::from(m)).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_window(steps: usize, channels: usize) -> Window {
        let data = (0..steps * channels).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        Window::new(steps, channels, data)
    }

    #[test]
    fn aggregate_signal_cases() {
        let w = Window::new(3, 2, vec![1.0, -1.0, 2.0, -2.0, 3.0, -3.0]);
        assert_eq!(aggregate_signal(&w, &[0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(aggregate_signal(&w, &[0, 0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(aggregate_signal(&w, &[0, 1]).unwrap(), vec![0.0, 0.0, 0.0]);
        assert!(aggregate_signal(&w, &[]).is_err());
        assert!(aggregate_signal(&w, &[2]).is_err());
    }

    #[test]
    fn sdae_input_pads_with_spreads() {
        let w = Window::new(2, 3, vec![1.0, 0.0, 5.0, 3.0, 0.0, 5.0]);
        let v = sdae_input(&w, &[0, 2]);
        assert_eq!(v.len(), SDAE_INPUT);
        assert_eq!(&v[..4], &[2.0, 5.0, 1.0, 0.0]);
        assert!(v[4..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn names_are_unique_and_37() {
        let names = feature_names();
        assert_eq!(names.len(), FEATURE_DIM);
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), FEATURE_DIM);
    }

    #[test]
    fn featurize_and_export() {
        let samples: Vec<WindowedSample> = (0..8)
            .map(|i| WindowedSample {
                window: ramp_window(80 + i, 4),
                rul: i as f64,
                unit_id: 1,
                end_cycle: 80 + i as u32,
            })
            .collect();
        let mut cfg = FeatureConfig::new(vec![0, 1, 3]);
        cfg.sdae.epochs = 2;
        let p = FeaturePipeline::fit(&samples, cfg, 5).unwrap();
        let feats = p.featurize_all(&samples).unwrap();
        assert_eq!(feats[0].as_slice().len(), 37);
        assert_eq!(feats[0], p.featurize(&samples[0].window).unwrap());
        let reversed: Vec<WindowedSample> = samples.iter().rev().cloned().collect();
        let back = p.featurize_all(&reversed).unwrap();
        assert!(back.iter().rev().eq(feats.iter()));
        let mask = vec![false; 8];
        let csv = feature_csv(&samples, &feats, &mask).unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 40);
        assert!(header.ends_with("unit_id,end_cycle,attack_mask"));
        assert_eq!(csv.lines().count(), 9);
        assert!(feature_csv(&samples, &feats, &mask[..3]).is_err());
        let json = p.to_json().unwrap();
        assert_eq!(FeaturePipeline::from_json(&json, Path::new("mem")).unwrap(), p);
    }
}
