//! Synthetic run-to-failure fleets in the C-MAPSS layout.
//!
//! Each unit draws a lifetime, an initial wear offset and a degradation
//! rate. Fourteen sensors drift exponentially towards failure on top of
//! Gaussian measurement noise; the remaining seven and one operating
//! setting are constant, as in the single-condition subsets. Test units are
//! cut off at a random point and their true remaining life is recorded.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CycleRow, SensorTrajectory, TrajectorySet, N_CHANNELS, N_SETTINGS, N_SENSORS};
use crate::error::Result;
use crate::io::write_atomic;

/// (baseline, drift at failure, noise sd); zero drift and noise mark a
/// constant sensor.
const SENSORS: [(f64, f64, f64); N_SENSORS] = [
    (518.67, 0.0, 0.0),
    (642.2, 1.8, 0.5),
    (1585.0, 25.0, 6.0),
    (1400.0, 38.0, 9.0),
    (14.62, 0.0, 0.0),
    (21.61, 0.0, 0.0),
    (554.0, -3.2, 0.9),
    (2388.0, 0.25, 0.07),
    (9050.0, 45.0, 22.0),
    (1.3, 0.0, 0.0),
    (47.3, 1.2, 0.27),
    (522.0, -2.9, 0.74),
    (2388.0, 0.25, 0.07),
    (8140.0, 30.0, 19.0),
    (8.42, 0.1, 0.04),
    (0.03, 0.0, 0.0),
    (392.0, 5.0, 1.5),
    (2388.0, 0.0, 0.0),
    (100.0, 0.0, 0.0),
    (38.9, -0.6, 0.18),
    (23.34, -0.35, 0.11),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub train_units: usize,
    pub test_units: usize,
    pub min_life: usize,
    pub max_life: usize,
    /// Smallest number of cycles kept for a test unit.
    pub min_test_cycles: usize,
    /// Multiplies every sensor's noise level.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            train_units: 100,
            test_units: 100,
            min_life: 128,
            max_life: 362,
            min_test_cycles: 31,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fleet {
    pub train: TrajectorySet,
    pub test: TrajectorySet,
    /// True remaining life of each test unit after its last cycle.
    pub truth: Vec<f64>,
}

fn simulate_unit(unit_id: u32, life: usize, keep: usize, cfg: &FleetConfig, rng: &mut ChaCha8Rng) -> SensorTrajectory {
    let wear: f64 = rng.random_range(0.0..0.15);
    let sharpness: f64 = rng.random_range(2.0..4.0);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let rows = (1..=keep)
        .map(|cycle| {
            let x = wear + (1.0 - wear) * cycle as f64 / life as f64;
            let health = ((sharpness * x).exp() - 1.0) / (sharpness.exp() - 1.0);
            let mut channels = [0.0; N_CHANNELS];
            channels[0] = 0.002 * std_normal.sample(rng);
            channels[1] = 0.0003 * std_normal.sample(rng);
            channels[2] = 100.0;
            for (s, &(base, drift, sd)) in SENSORS.iter().enumerate() {
                channels[N_SETTINGS + s] = base + drift * health + cfg.noise_scale * sd * std_normal.sample(rng);
            }
            CycleRow {
                cycle: cycle as u32,
                channels,
            }
        })
        .collect();
    SensorTrajectory {
        unit_id,
        rows,
        rul: None,
    }
}

pub fn generate(cfg: &FleetConfig) -> Fleet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = (0..cfg.train_units)
        .map(|u| {
            let life = rng.random_range(cfg.min_life..=cfg.max_life);
            simulate_unit(u as u32 + 1, life, life, cfg, &mut rng)
        })
        .collect();
    let mut truth = Vec::with_capacity(cfg.test_units);
    let test = (0..cfg.test_units)
        .map(|u| {
            let life = rng.random_range(cfg.min_life..=cfg.max_life);
            let lo = cfg.min_test_cycles.min(life);
            let keep = rng.random_range(lo..=life.max(lo));
            truth.push((life - keep) as f64);
            simulate_unit(u as u32 + 1, life, keep, cfg, &mut rng)
        })
        .collect();
    Fleet {
        train: TrajectorySet { units: train },
        test: TrajectorySet { units: test },
        truth,
    }
}

impl Fleet {
    pub fn truth_text(&self) -> String {
        let mut out = String::new();
        for t in &self.truth {
            writeln!(out, "{t}").unwrap();
        }
        out
    }

    /// Writes `train_<tag>.txt`, `test_<tag>.txt` and `RUL_<tag>.txt`.
    pub fn write(&self, dir: &Path, tag: &str) -> Result<()> {
        write_atomic(&dir.join(format!("train_{tag}.txt")), self.train.to_cmapss_text().as_bytes())?;
        write_atomic(&dir.join(format!("test_{tag}.txt")), self.test.to_cmapss_text().as_bytes())?;
        write_atomic(&dir.join(format!("RUL_{tag}.txt")), self.truth_text().as_bytes())
    }
}
