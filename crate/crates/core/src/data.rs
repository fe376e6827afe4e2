//! C-MAPSS ingestion: parsing, RUL labelling, z-score normalisation and
//! sliding windows.
//!
//! A C-MAPSS row is 26 whitespace-separated numbers: unit id, cycle, three
//! operational settings and 21 sensor readings. Everything downstream works
//! on the 24 numeric channels (settings followed by sensors).

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_SETTINGS: usize = 3;
pub const N_SENSORS: usize = 21;
/// Channels fed to the models: settings then sensors.
pub const N_CHANNELS: usize = N_SETTINGS + N_SENSORS;
const N_COLUMNS: usize = 2 + N_CHANNELS;

/// Default piecewise-linear RUL cap in cycles.
pub const DEFAULT_RUL_CAP: f64 = 125.0;
/// Default sliding window length.
pub const DEFAULT_WINDOW: usize = 80;

const CONSTANT_STD: f64 = 1e-12;

/// Human-readable channel names in model order.
pub fn channel_names() -> Vec<String> {
    (1..=N_SETTINGS)
        .map(|i| format!("setting{i}"))
        .chain((1..=N_SENSORS).map(|i| format!("sensor{i}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRow {
    pub cycle: u32,
    /// Settings then sensors.
    pub channels: [f64; N_CHANNELS],
}

impl CycleRow {
    pub fn settings(&self) -> &[f64] {
        &self.channels[..N_SETTINGS]
    }

    pub fn sensors(&self) -> &[f64] {
        &self.channels[N_SETTINGS..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorTrajectory {
    pub unit_id: u32,
    pub rows: Vec<CycleRow>,
    /// Per-row RUL labels, present after [`label_rul`] / [`label_test_rul`].
    pub rul: Option<Vec<f64>>,
}

impl SensorTrajectory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last_cycle(&self) -> u32 {
        self.rows.last().map_or(0, |r| r.cycle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub units: Vec<SensorTrajectory>,
}

impl TrajectorySet {
    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn row_count(&self) -> usize {
        self.units.iter().map(|u| u.rows.len()).sum()
    }

    /// (min, max) trajectory length in cycles.
    pub fn cycle_extent(&self) -> Option<(usize, usize)> {
        let lens = self.units.iter().map(|u| u.rows.len());
        let min = lens.clone().min()?;
        let max = lens.max()?;
        Some((min, max))
    }

    /// Keep only the first `n` units (by unit id order).
    pub fn take_units(&self, n: usize) -> TrajectorySet {
        TrajectorySet {
            units: self.units.iter().take(n).cloned().collect(),
        }
    }

    /// Serialise back to C-MAPSS text. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn to_cmapss_text(&self) -> String {
        let mut out = String::new();
        for unit in &self.units {
            for row in &unit.rows {
                write!(out, "{} {}", unit.unit_id, row.cycle).unwrap();
                for v in &row.channels {
                    write!(out, " {v:?}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Parse C-MAPSS text. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn parse_cmapss(text: &str) -> Result<TrajectorySet> {
    // (unit, cycle, line, channels)
    let mut raw: Vec<(u32, u32, usize, [f64; N_CHANNELS])> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != N_COLUMNS {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {N_COLUMNS} columns, found {}", tokens.len()),
            });
        }
        let mut nums = [0.0f64; N_COLUMNS];
        for (slot, tok) in nums.iter_mut().zip(&tokens) {
            *slot = tok.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("malformed number {tok:?}"),
            })?;
            if !slot.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-finite value {tok:?}"),
                });
            }
        }
        let unit = as_index(nums[0]).ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("unit id {:?} is not a positive integer", tokens[0]),
        })?;
        let cycle = as_index(nums[1]).ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("cycle {:?} is not a positive integer", tokens[1]),
        })?;
        let mut channels = [0.0; N_CHANNELS];
        channels.copy_from_slice(&nums[2..]);
        raw.push((unit, cycle, lineno, channels));
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }

    raw.sort_by_key(|&(unit, cycle, line, _)| (unit, cycle, line));
    let mut units: Vec<SensorTrajectory> = Vec::new();
    for (unit, cycle, line, channels) in raw {
        let start_new = units.last().is_none_or(|u| u.unit_id != unit);
        if start_new {
            units.push(SensorTrajectory {
                unit_id: unit,
                rows: Vec::new(),
                rul: None,
            });
        }
        let traj = units.last_mut().unwrap();
        let expected = traj.rows.len() as u32 + 1;
        if cycle != expected {
            return Err(Error::Parse {
                line,
                msg: format!("unit {unit}: expected cycle {expected}, found {cycle}"),
            });
        }
        traj.rows.push(CycleRow { cycle, channels });
    }
    Ok(TrajectorySet { units })
}

fn as_index(v: f64) -> Option<u32> {
    (v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64).then_some(v as u32)
}

/// Parse a ground-truth RUL file: one non-negative number per non-blank line.
pub fn parse_rul_truth(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            msg: format!("malformed RUL value {t:?}"),
        })?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("RUL must be a non-negative number, got {t:?}"),
            });
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

/// Run-to-failure labels: row at cycle `c` of a unit of length `L` gets
/// `min(L - c, cap)`.
pub fn label_rul(ts: &TrajectorySet, cap: f64) -> TrajectorySet {
    assert!(cap > 0.0, "RUL cap must be positive");
    let units = ts
        .units
        .iter()
        .map(|u| {
            let len = u.rows.len() as f64;
            let labels = u
                .rows
                .iter()
                .map(|r| (len - r.cycle as f64).min(cap))
                .collect();
            SensorTrajectory {
                rul: Some(labels),
                ..u.clone()
            }
        })
        .collect();
    TrajectorySet { units }
}

/// Labels for truncated test trajectories: the final row's RUL is given by
/// the ground-truth file, earlier rows count up from it.
pub fn label_test_rul(ts: &TrajectorySet, truth: &[f64], cap: f64) -> Result<TrajectorySet> {
    if truth.len() != ts.units.len() {
        return Err(Error::Shape {
            expected: format!("{} ground-truth values", ts.units.len()),
            got: truth.len().to_string(),
        });
    }
    let units = ts
        .units
        .iter()
        .zip(truth)
        .map(|(u, &end_rul)| {
            let last = u.last_cycle() as f64;
            let labels = u
                .rows
                .iter()
                .map(|r| (end_rul + last - r.cycle as f64).min(cap))
                .collect();
            SensorTrajectory {
                rul: Some(labels),
                ..u.clone()
            }
        })
        .collect();
    Ok(TrajectorySet { units })
}

/// Per-channel z-score statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &TrajectorySet) -> Result<Self> {
        let n = train.row_count();
        if n < 2 {
            return Err(Error::Precondition(format!(
                "normalizer needs at least 2 rows, got {n}"
            )));
        }
        // Accumulate offsets from the first row so constant channels get
        // an exact mean and zero spread.
        let origin = train.units.iter().flat_map(|u| &u.rows).next().map_or([0.0; N_CHANNELS], |r| r.channels);
        let mut mean = vec![0.0; N_CHANNELS];
        for row in train.units.iter().flat_map(|u| &u.rows) {
            for ((m, v), o) in mean.iter_mut().zip(&row.channels).zip(&origin) {
                *m += v - o;
            }
        }
        mean.iter_mut().zip(&origin).for_each(|(m, o)| *m = o + *m / n as f64);
        let mut var = vec![0.0; N_CHANNELS];
        for row in train.units.iter().flat_map(|u| &u.rows) {
            for ((s, v), m) in var.iter_mut().zip(&row.channels).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(Normalizer { mean, std })
    }

    pub fn is_constant(&self, channel: usize) -> bool {
        self.std[channel] < CONSTANT_STD
    }

    /// Indices of channels that carry information.
    pub fn informative_channels(&self) -> Vec<usize> {
        (0..self.std.len()).filter(|&c| !self.is_constant(c)).collect()
    }

    pub fn apply(&self, ts: &TrajectorySet) -> TrajectorySet {
        let units = ts
            .units
            .iter()
            .map(|u| SensorTrajectory {
                rows: u
                    .rows
                    .iter()
                    .map(|r| {
                        let mut channels = r.channels;
                        self.transform(&mut channels);
                        CycleRow {
                            cycle: r.cycle,
                            channels,
                        }
                    })
                    .collect(),
                ..u.clone()
            })
            .collect();
        TrajectorySet { units }
    }

    fn transform(&self, channels: &mut [f64]) {
        for (c, v) in channels.iter_mut().enumerate() {
            *v = if self.is_constant(c) {
                0.0
            } else {
                (*v - self.mean[c]) / self.std[c]
            };
        }
    }
}

/// Row-major `steps x channels` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub steps: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Window {
    pub fn new(steps: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), steps * channels, "window data length");
        Window {
            steps,
            channels,
            data,
        }
    }

    pub fn zeros(steps: usize, channels: usize) -> Self {
        Window::new(steps, channels, vec![0.0; steps * channels])
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.channels + c]
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.steps).map(|t| self.get(t, c)).collect()
    }

    /// Same window with the time axis reversed.
    pub fn time_reversed(&self) -> Window {
        let mut data = Vec::with_capacity(self.data.len());
        for t in (0..self.steps).rev() {
            data.extend_from_slice(self.row(t));
        }
        Window::new(self.steps, self.channels, data)
    }

    pub fn linf_distance(&self, other: &Window) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub window: Window,
    pub rul: f64,
    pub unit_id: u32,
    pub end_cycle: u32,
}

fn window_ending_at(unit: &SensorTrajectory, labels: &[f64], end: usize, w: usize) -> WindowedSample {
    // `end` is a 0-based row index; rows before the first are replaced by it.
    let mut data = Vec::with_capacity(w * N_CHANNELS);
    for k in 0..w {
        let idx = (end + 1 + k).saturating_sub(w);
        data.extend_from_slice(&unit.rows[idx].channels);
    }
    WindowedSample {
        window: Window::new(w, N_CHANNELS, data),
        rul: labels[end],
        unit_id: unit.unit_id,
        end_cycle: unit.rows[end].cycle,
    }
}

fn labels_of(unit: &SensorTrajectory) -> Result<&[f64]> {
    unit.rul.as_deref().ok_or_else(|| {
        Error::Precondition(format!("unit {} has no RUL labels", unit.unit_id))
    })
}

/// Sliding windows ending at cycles `w, w + stride, ...`. A unit shorter than
/// `w` yields one window whose leading rows repeat the unit's first row.
pub fn make_windows(unit: &SensorTrajectory, w: usize, stride: usize) -> Result<Vec<WindowedSample>> {
    if w == 0 || stride == 0 {
        return Err(Error::Precondition("window and stride must be >= 1".into()));
    }
    let labels = labels_of(unit)?;
    let len = unit.rows.len();
    if len == 0 {
        return Ok(Vec::new());
    }
    if len < w {
        return Ok(vec![window_ending_at(unit, labels, len - 1, w)]);
    }
    Ok((w - 1..len)
        .step_by(stride)
        .map(|end| window_ending_at(unit, labels, end, w))
        .collect())
}

/// The single window ending at the unit's last recorded cycle.
pub fn last_window(unit: &SensorTrajectory, w: usize) -> Result<WindowedSample> {
    if w == 0 {
        return Err(Error::Precondition("window must be >= 1".into()));
    }
    let labels = labels_of(unit)?;
    if unit.rows.is_empty() {
        return Err(Error::Precondition(format!("unit {} is empty", unit.unit_id)));
    }
    Ok(window_ending_at(unit, labels, unit.rows.len() - 1, w))
}

pub fn windows_for_set(ts: &TrajectorySet, w: usize, stride: usize) -> Result<Vec<WindowedSample>> {
    let mut out = Vec::new();
    for u in &ts.units {
        out.extend(make_windows(u, w, stride)?);
    }
    Ok(out)
}

pub fn last_windows_for_set(ts: &TrajectorySet, w: usize) -> Result<Vec<WindowedSample>> {
    ts.units.iter().map(|u| last_window(u, w)).collect()
}

/// Split units (not rows) into train/validation under a seed.
pub fn split_units(ts: &TrajectorySet, val_fraction: f64, seed: u64) -> (TrajectorySet, TrajectorySet) {
    let n = ts.units.len();
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val_idx = idx[..n_val].to_vec();
    val_idx.sort_unstable();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, u) in ts.units.iter().enumerate() {
        if val_idx.binary_search(&i).is_ok() {
            val.push(u.clone());
        } else {
            train.push(u.clone());
        }
    }
    (TrajectorySet { units: train }, TrajectorySet { units: val })
}
