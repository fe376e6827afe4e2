//! Manifest-driven experiment stages.
//!
//! A manifest is a TOML file naming the datasets and every knob of the
//! pipeline. Its hash (SHA-256 of the canonical JSON form, output location
//! excluded) names the run directory, so reruns with the same manifest
//! reuse and overwrite the same files:
//!
//! ```text
//! <root>/<name>-<hash16>/
//!   manifest.json
//!   data/<id>/{train,val,test}.win  normalizer.json  summary.json
//!   models/<id>/substitute.json  models/<id>/target_<arch>.json
//!   attacks/{detect,eval}/<method>_<ratio>.win  (+ .mask)
//!   detect/features.json  detect/detector.json  detect/sweep.csv
//!   transfer/matrix.csv  transfer/ranking.json
//!   retrain/retrained_<arch>.json  retrain/rounds.csv
//!   dodem/evaluation.csv
//!   report/report.{csv,json}
//! ```
//!
//! The stage functions below work on in-memory values; the `dodem` binary
//! wires them to these files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use serde::de::DeserializeOwned;

use crate::attack::{attack_all, inject_random, AttackMethod, AttackSpec, PerturbedDataset};
use crate::data::{
    label_rul, label_test_rul, parse_cmapss, parse_rul_truth, split_units, windows_for_set, Normalizer,
    TrajectorySet, WindowedSample, DEFAULT_RUL_CAP, DEFAULT_WINDOW,
};
use crate::defense::{
    evaluate_dodem, rank_substitutes, retrain_set, rmse_of, standard_train,
    transferability_analysis, DetectorRouter, DodemEvaluation, RetrainOutcome, RetrainPlan, Router,
    TransferCell, TransferabilityMatrix,
};
use crate::detect::{sweep_best_f2, Detector, DetectorKind, Sweep, DEFAULT_NEIGHBORS, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::features::{ChaosConfig, FeatureConfig, FeaturePipeline, SdaeConfig};
use crate::io::{load_mask, load_windows, read_text, save_mask, save_windows, write_atomic};
use crate::metrics::{Report, ReportRow};
use crate::nn::{build_model, train, Architecture, ModelSet, ModelSpec, Regressor, TrainConfig, TrainedModel};
use crate::synthetic::{generate, FleetConfig};

/// Overrides the manifest's output directory.
pub const OUTPUT_ROOT_ENV: &str = "DODEM_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub truth: Option<PathBuf>,
    /// Generate the data instead of reading files.
    #[serde(default)]
    pub synthetic: Option<FleetConfig>,
}

impl DatasetEntry {
    pub fn files(id: &str, dir: &Path) -> Self {
        DatasetEntry {
            id: id.into(),
            train: Some(dir.join(format!("train_{id}.txt"))),
            test: Some(dir.join(format!("test_{id}.txt"))),
            truth: Some(dir.join(format!("RUL_{id}.txt"))),
            synthetic: None,
        }
    }

    pub fn synthetic(id: &str, fleet: FleetConfig) -> Self {
        DatasetEntry {
            id: id.into(),
            train: None,
            test: None,
            truth: None,
            synthetic: Some(fleet),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub window: usize,
    pub train_stride: usize,
    pub test_stride: usize,
    pub rul_cap: f64,
    /// Keep only the first units of each split.
    pub max_train_units: Option<usize>,
    pub max_test_units: Option<usize>,
    /// Fraction of training units held out for validation.
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            window: DEFAULT_WINDOW,
            train_stride: 1,
            test_stride: 1,
            rul_cap: DEFAULT_RUL_CAP,
            max_train_units: None,
            max_test_units: None,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub substitute: Architecture,
    pub targets: Vec<Architecture>,
    pub width_scale: f64,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            substitute: Architecture::Cnn1d,
            targets: Architecture::TARGETS.to_vec(),
            width_scale: crate::nn::DEFAULT_WIDTH_SCALE,
        }
    }
}

impl ModelsConfig {
    pub fn spec(&self, a: Architecture) -> ModelSpec {
        ModelSpec::reference(a).with_scale(self.width_scale)
    }
}

/// Which model crafts the evaluation perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalCrafter {
    /// White-box against the standard target set.
    StandardTargets,
    Substitute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackGrid {
    pub methods: Vec<AttackMethod>,
    pub epsilon: f64,
    pub iterations: usize,
    pub decay: f64,
    pub clip_mim: bool,
    pub ratios: Vec<f64>,
    pub eval_crafter: EvalCrafter,
    /// Methods used to build the detection test sets (crafted with the
    /// target dataset's substitute).
    pub detect_methods: Vec<AttackMethod>,
}

impl Default for AttackGrid {
    fn default() -> Self {
        AttackGrid {
            methods: AttackMethod::ALL.to_vec(),
            epsilon: 0.1,
            iterations: 100,
            decay: 1.0,
            clip_mim: true,
            ratios: vec![0.01, 0.05, 0.1, 0.2],
            eval_crafter: EvalCrafter::StandardTargets,
            detect_methods: vec![AttackMethod::Fgsm],
        }
    }
}

impl AttackGrid {
    pub fn spec(&self, method: AttackMethod) -> AttackSpec {
        AttackSpec {
            method,
            epsilon: self.epsilon,
            iterations: self.iterations,
            decay: self.decay,
            clip_mim: self.clip_mim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectGrid {
    pub detectors: Vec<DetectorKind>,
    pub nu: Vec<f64>,
    pub contamination: Vec<f64>,
    pub neighbors: usize,
    /// Training windows used to fit detectors, thinned evenly.
    pub max_train_rows: usize,
    /// Detector family used for routing.
    pub routing: DetectorKind,
}

impl Default for DetectGrid {
    fn default() -> Self {
        DetectGrid {
            detectors: DetectorKind::ALL.to_vec(),
            nu: DEFAULT_GRID.to_vec(),
            contamination: DEFAULT_GRID.to_vec(),
            neighbors: DEFAULT_NEIGHBORS,
            max_train_rows: 2000,
            routing: DetectorKind::Lof,
        }
    }
}

impl DetectGrid {
    pub fn grid(&self, kind: DetectorKind) -> &[f64] {
        match kind {
            DetectorKind::Ocsvm => &self.nu,
            DetectorKind::Lof => &self.contamination,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub sdae: SdaeConfig,
    pub chaos: ChaosConfig,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        FeatureSettings {
            sdae: SdaeConfig::default(),
            chaos: ChaosConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainSettings {
    pub budget: f64,
    pub extra_epochs: usize,
    pub max_rounds: usize,
    pub validation_ratio: f64,
}

impl Default for RetrainSettings {
    fn default() -> Self {
        RetrainSettings {
            budget: 0.01,
            extra_epochs: 30,
            max_rounds: 1,
            validation_ratio: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub model: u64,
    pub attack: u64,
    pub features: u64,
    pub retrain: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            data: 1,
            model: 2,
            attack: 3,
            features: 4,
            retrain: 5,
        }
    }
}

impl Seeds {
    pub fn all(&self) -> Vec<u64> {
        vec![self.data, self.model, self.attack, self.features, self.retrain]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub name: String,
    /// Dataset the defended models serve.
    pub target_dataset: String,
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub attack: AttackGrid,
    #[serde(default)]
    pub detect: DetectGrid,
    #[serde(default)]
    pub features: FeatureSettings,
    #[serde(default)]
    pub retrain: RetrainSettings,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentManifest {
    /// Reads a manifest and resolves dataset paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    /// Like [`ExperimentManifest::load`], after replacing dotted keys such as
    /// `data.train_stride=3`. Values are parsed as TOML, falling back to a
    /// plain string.
    pub fn load_with_overrides(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = read_text(path)?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        for (key, raw) in overrides {
            set_dotted(&mut table, key, parse_toml_value(raw))?;
        }
        let mut m: ExperimentManifest = table.try_into().map_err(|e: toml::de::Error| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut m.datasets {
            for p in [&mut d.train, &mut d.test, &mut d.truth].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if let Some(o) = &mut m.output_dir {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("manifest lists no datasets".into()));
        }
        if !self.datasets.iter().any(|d| d.id == self.target_dataset) {
            return Err(Error::Config(format!("target dataset {:?} is not listed", self.target_dataset)));
        }
        for d in &self.datasets {
            if d.synthetic.is_none() {
                for (what, p) in [("train", &d.train), ("test", &d.test), ("truth", &d.truth)] {
                    match p {
                        None => return Err(Error::Config(format!("dataset {}: missing {what} path", d.id))),
                        Some(p) if !p.exists() => {
                            return Err(Error::Io {
                                path: p.clone(),
                                source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                            })
                        }
                        _ => {}
                    }
                }
            }
        }
        if self.attack.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("adversarial ratios must lie in [0, 1]".into()));
        }
        for m in &self.attack.methods {
            self.attack.spec(*m).validate()?;
        }
        Ok(())
    }

    pub fn dataset(&self, id: &str) -> Result<&DatasetEntry> {
        self.datasets
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::Config(format!("unknown dataset {id:?}")))
    }

    /// SHA-256 over the canonical JSON form with the output location
    /// removed, hex encoded.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.content()).expect("manifest serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    /// The manifest without its output location: what the run directory
    /// is addressed by and what gets recorded inside it.
    pub fn content(&self) -> ExperimentManifest {
        let mut m = self.clone();
        m.output_dir = None;
        m
    }

    /// Output root from the environment, then the manifest, then
    /// `dodem-out`.
    pub fn output_root(&self) -> PathBuf {
        std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("dodem-out"))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root().join(format!("{}-{}", self.name, &self.config_hash()[..16]))
    }

    /// Desk configuration over the C-MAPSS files in `dir` when given
    /// (FD001 defended, FD002 and FD003 as substitute sources), otherwise
    /// over three synthetic fleets.
    pub fn desk_default(dir: Option<&Path>) -> Self {
        match dir {
            Some(dir) => ExperimentManifest::desk(
                DatasetEntry::files("FD001", dir),
                vec![DatasetEntry::files("FD002", dir), DatasetEntry::files("FD003", dir)],
            ),
            None => {
                let fleet = |seed, noise_scale| FleetConfig {
                    train_units: 24,
                    test_units: 24,
                    noise_scale,
                    seed,
                    ..FleetConfig::default()
                };
                ExperimentManifest::desk(
                    DatasetEntry::synthetic("SYN1", fleet(11, 1.0)),
                    vec![
                        DatasetEntry::synthetic("SYN2", fleet(12, 1.5)),
                        DatasetEntry::synthetic("SYN3", fleet(13, 0.7)),
                    ],
                )
            }
        }
    }

    /// Small configuration that runs end to end in minutes on one core.
    pub fn desk(target: DatasetEntry, others: Vec<DatasetEntry>) -> Self {
        let mut datasets = vec![target.clone()];
        datasets.extend(others);
        ExperimentManifest {
            name: "desk".into(),
            target_dataset: target.id,
            datasets,
            data: DataConfig {
                train_stride: 5,
                test_stride: 3,
                max_train_units: Some(20),
                max_test_units: Some(20),
                ..DataConfig::default()
            },
            models: ModelsConfig {
                targets: vec![Architecture::Rnn, Architecture::Gru, Architecture::Cgru],
                ..ModelsConfig::default()
            },
            train: TrainConfig {
                batch_size: 32,
                ..TrainConfig::default()
            },
            attack: AttackGrid {
                methods: vec![AttackMethod::Fgsm, AttackMethod::Bim],
                iterations: 10,
                ratios: vec![0.01, 0.2],
                ..AttackGrid::default()
            },
            detect: DetectGrid {
                max_train_rows: 600,
                ..DetectGrid::default()
            },
            features: FeatureSettings {
                sdae: SdaeConfig {
                    epochs: 20,
                    ..SdaeConfig::default()
                },
                ..FeatureSettings::default()
            },
            retrain: RetrainSettings::default(),
            seeds: Seeds::default(),
            output_dir: None,
        }
    }
}

fn parse_toml_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.into()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("bad override key {key:?}")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(last.into(), value);
    Ok(())
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDataset {
    pub train: TrajectorySet,
    pub test: TrajectorySet,
    pub truth: Vec<f64>,
}

pub fn load_raw(entry: &DatasetEntry) -> Result<RawDataset> {
    if let Some(fleet) = &entry.synthetic {
        let f = generate(fleet);
        return Ok(RawDataset {
            train: f.train,
            test: f.test,
            truth: f.truth,
        });
    }
    let path = |p: &Option<PathBuf>, what: &str| {
        p.clone().ok_or_else(|| Error::Config(format!("dataset {}: missing {what} path", entry.id)))
    };
    let train_path = path(&entry.train, "train")?;
    let test_path = path(&entry.test, "test")?;
    let truth_path = path(&entry.truth, "truth")?;
    let with_path = |p: &Path, e: Error| match e {
        Error::Parse { line, msg } => Error::format(p, format!("line {line}: {msg}")),
        other => other,
    };
    Ok(RawDataset {
        train: parse_cmapss(&read_text(&train_path)?).map_err(|e| with_path(&train_path, e))?,
        test: parse_cmapss(&read_text(&test_path)?).map_err(|e| with_path(&test_path, e))?,
        truth: parse_rul_truth(&read_text(&truth_path)?).map_err(|e| with_path(&truth_path, e))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub train_units: usize,
    pub test_units: usize,
    pub train_cycles: Option<(usize, usize)>,
    pub test_cycles: Option<(usize, usize)>,
    pub used_train_units: usize,
    pub used_test_units: usize,
    pub informative_channels: Vec<usize>,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub id: String,
    pub normalizer: Normalizer,
    pub channels: Vec<usize>,
    pub train: Vec<WindowedSample>,
    pub val: Vec<WindowedSample>,
    pub test: Vec<WindowedSample>,
    pub summary: DatasetSummary,
}

/// Unit limits, labelling, a unit-level validation split, z-scoring with
/// training statistics and windowing.
pub fn prepare(id: &str, raw: &RawDataset, cfg: &DataConfig, seed: u64) -> Result<PreparedDataset> {
    if raw.truth.len() != raw.test.unit_count() {
        return Err(Error::Shape {
            expected: format!("{} truth values", raw.test.unit_count()),
            got: raw.truth.len().to_string(),
        });
    }
    let train_ts = cfg.max_train_units.map_or_else(|| raw.train.clone(), |n| raw.train.take_units(n));
    let n_test = cfg.max_test_units.unwrap_or(raw.test.unit_count()).min(raw.test.unit_count());
    let test_ts = raw.test.take_units(n_test);
    let labelled = label_rul(&train_ts, cfg.rul_cap);
    let (fit_ts, val_ts) = split_units(&labelled, cfg.val_fraction, seed);
    let normalizer = Normalizer::fit(&fit_ts)?;
    let channels = normalizer.informative_channels();
    let test_labelled = label_test_rul(&test_ts, &raw.truth[..n_test], cfg.rul_cap)?;
    let train = windows_for_set(&normalizer.apply(&fit_ts), cfg.window, cfg.train_stride)?;
    let val = windows_for_set(&normalizer.apply(&val_ts), cfg.window, cfg.train_stride)?;
    let test = windows_for_set(&normalizer.apply(&test_labelled), cfg.window, cfg.test_stride)?;
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Precondition(format!("dataset {id}: a split produced no windows")));
    }
    let summary = DatasetSummary {
        id: id.into(),
        train_units: raw.train.unit_count(),
        test_units: raw.test.unit_count(),
        train_cycles: raw.train.cycle_extent(),
        test_cycles: raw.test.cycle_extent(),
        used_train_units: train_ts.unit_count(),
        used_test_units: n_test,
        informative_channels: channels.clone(),
        train_windows: train.len(),
        val_windows: val.len(),
        test_windows: test.len(),
    };
    log::info!(
        "{id}: {} train / {} test units, {} / {} / {} windows",
        summary.train_units,
        summary.test_units,
        train.len(),
        val.len(),
        test.len()
    );
    Ok(PreparedDataset {
        id: id.into(),
        normalizer,
        channels,
        train,
        val,
        test,
        summary,
    })
}

// ---------------------------------------------------------------- train

pub fn train_substitute(d: &PreparedDataset, models: &ModelsConfig, cfg: &TrainConfig, seed: u64) -> Result<TrainedModel> {
    let first = &d.train[0].window;
    let init = build_model(&models.spec(models.substitute), first.steps, first.channels, seed)?;
    train(&init, &d.train, &d.val, cfg)
}

pub fn train_targets(d: &PreparedDataset, models: &ModelsConfig, cfg: &TrainConfig, seed: u64) -> Result<ModelSet> {
    let specs: Vec<ModelSpec> = models.targets.iter().map(|&a| models.spec(a)).collect();
    standard_train(&specs, &d.train, &d.val, cfg, seed)
}

// ---------------------------------------------------------------- attack

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackCell {
    pub method: AttackMethod,
    pub ratio: f64,
    pub data: PerturbedDataset,
}

impl AttackCell {
    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.method.name().to_ascii_lowercase(), self.ratio)
    }
}

/// One perturbed copy of `test` per (method, ratio). All methods share the
/// injection positions of a given ratio.
pub fn craft_cells(
    test: &[WindowedSample],
    crafter: &dyn Regressor,
    grid: &AttackGrid,
    methods: &[AttackMethod],
    seed: u64,
) -> Result<Vec<AttackCell>> {
    let mut out = Vec::new();
    for &method in methods {
        for (k, &ratio) in grid.ratios.iter().enumerate() {
            let data = inject_random(test, crafter, &grid.spec(method), ratio, seed.wrapping_add(k as u64))?;
            log::info!("{method} at ratio {ratio}: {} of {} attacked", data.attacked_count(), test.len());
            out.push(AttackCell { method, ratio, data });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- detect

pub fn fit_features(d: &PreparedDataset, settings: &FeatureSettings, seed: u64) -> Result<FeaturePipeline> {
    let cfg = FeatureConfig {
        channels: d.channels.clone(),
        sdae_channels: Vec::new(),
        chaos: settings.chaos.clone(),
        sdae: settings.sdae.clone(),
    };
    FeaturePipeline::fit(&d.train, cfg, seed)
}

/// Every `ceil(n / max)`-th row.
pub fn thin<T: Clone>(rows: &[T], max: usize) -> Vec<T> {
    let step = rows.len().div_ceil(max.max(1)).max(1);
    rows.iter().step_by(step).cloned().collect()
}

pub fn feature_rows(p: &FeaturePipeline, samples: &[WindowedSample]) -> Result<Vec<Vec<f64>>> {
    Ok(p.featurize_all(samples)?.into_iter().map(|f| f.0.to_vec()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub method: AttackMethod,
    pub ratio: f64,
    pub sweep: Sweep,
}

pub fn detection_sweeps(
    train_rows: &[Vec<f64>],
    cells: &[(AttackCell, Vec<Vec<f64>>)],
    grid: &DetectGrid,
) -> Result<Vec<SweepRecord>> {
    let mut out = Vec::new();
    for (cell, rows) in cells {
        if cell.data.attacked_count() == 0 {
            log::warn!("{} at ratio {} has no attacked samples; skipping", cell.method, cell.ratio);
            continue;
        }
        for &kind in &grid.detectors {
            let sweep = sweep_best_f2(kind, train_rows, rows, &cell.data.mask, grid.grid(kind), grid.neighbors)?;
            out.push(SweepRecord {
                method: cell.method,
                ratio: cell.ratio,
                sweep,
            });
        }
    }
    Ok(out)
}

/// Grid value of `kind` with the highest mean F2 across sweeps (ties to
/// the smaller value).
pub fn select_param(sweeps: &[SweepRecord], kind: DetectorKind, grid: &DetectGrid) -> Result<f64> {
    let params = grid.grid(kind);
    let mut best: Option<(f64, f64)> = None;
    let mut sorted = params.to_vec();
    sorted.sort_by(f64::total_cmp);
    for p in sorted {
        let scores: Vec<f64> = sweeps
            .iter()
            .filter(|s| s.sweep.kind == kind)
            .flat_map(|s| s.sweep.entries.iter().filter(|e| e.param == p).map(|e| e.f2))
            .collect();
        if scores.is_empty() {
            continue;
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        if best.is_none_or(|(_, b)| mean > b) {
            best = Some((p, mean));
        }
    }
    best.map(|b| b.0).ok_or_else(|| Error::Precondition(format!("no {kind} sweep results to select from")))
}

pub fn sweep_csv(sweeps: &[SweepRecord]) -> String {
    let mut out = String::from("detector,attack,ratio,param,f2,precision,recall,auc,best\n");
    for s in sweeps {
        for (i, e) in s.sweep.entries.iter().enumerate() {
            let auc = e.auc.map_or(String::new(), |a| format!("{a:?}"));
            writeln!(
                out,
                "{},{},{:?},{:?},{:?},{:?},{:?},{auc},{}",
                s.sweep.kind,
                s.method,
                s.ratio,
                e.param,
                e.f2,
                e.precision,
                e.recall,
                u8::from(i == s.sweep.best)
            )
            .unwrap();
        }
    }
    out
}

// ---------------------------------------------------------------- retrain

/// Retrains the standard set with substitutes in ranked order.
pub fn retrain_targets(
    standard: &ModelSet,
    d: &PreparedDataset,
    ranked: &[(String, TrainedModel)],
    grid: &AttackGrid,
    settings: &RetrainSettings,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelSet, Vec<RetrainOutcome>)> {
    let mut plan = RetrainPlan::new(&d.id, ranked.iter().map(|(id, _)| id.clone()).collect());
    plan.budget = settings.budget;
    plan.extra_epochs = settings.extra_epochs;
    plan.max_rounds = settings.max_rounds;
    plan.validation_ratio = settings.validation_ratio;
    plan.attack = grid.spec(AttackMethod::Fgsm);
    plan.seed = seed;
    plan.validate()?;
    let subs: Vec<&dyn Regressor> = ranked.iter().map(|(_, m)| m as &dyn Regressor).collect();
    retrain_set(standard, &d.train, &d.val, &plan, &subs, cfg)
}

pub fn rounds_csv(outcomes: &[RetrainOutcome]) -> String {
    let mut out = String::from("model,round,substitute,crafted,val_rmse,accepted,best_val_rmse,baseline_val_rmse,stop\n");
    for o in outcomes {
        let stop = serde_json::to_value(o.stop).expect("stop reason serialises");
        for r in &o.rounds {
            writeln!(
                out,
                "{},{},{},{},{:?},{},{:?},{:?},{}",
                o.model.architecture(),
                r.round,
                r.substitute,
                r.crafted,
                r.val_rmse,
                u8::from(r.accepted),
                r.best_val_rmse,
                o.baseline_val_rmse,
                stop.as_str().unwrap_or_default()
            )
            .unwrap();
        }
    }
    out
}

// ---------------------------------------------------------------- dodem

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: AttackMethod,
    pub ratio: f64,
    pub eval: DodemEvaluation,
}

pub fn evaluate_cells(
    standard: &ModelSet,
    retrained: &ModelSet,
    router: &dyn Router,
    cells: &[AttackCell],
) -> Result<Vec<EvalRecord>> {
    cells
        .iter()
        .map(|c| {
            let eval = evaluate_dodem(standard, retrained, router, &c.data)?;
            log::info!(
                "{} ratio {}: standard {:.3} adversarial {:.3} dodem {:.3}",
                c.method,
                c.ratio,
                eval.rmse_standard,
                eval.rmse_adversarial,
                eval.rmse_dodem
            );
            Ok(EvalRecord {
                method: c.method,
                ratio: c.ratio,
                eval,
            })
        })
        .collect()
}

pub fn evaluation_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from("strategy,attack,ratio,rmse,improvement_vs_standard,improvement_vs_adversarial\n");
    for r in records {
        let e = &r.eval;
        for (strategy, rmse) in [("standard", e.rmse_standard), ("adversarial", e.rmse_adversarial)] {
            writeln!(out, "{strategy},{},{:?},{rmse:?},,", r.method, r.ratio).unwrap();
        }
        writeln!(
            out,
            "dodem,{},{:?},{:?},{:?},{:?}",
            r.method, r.ratio, e.rmse_dodem, e.improvement_vs_standard, e.improvement_vs_adversarial
        )
        .unwrap();
    }
    out
}

/// Long-format report rows for evaluations and detection sweeps.
pub fn report_rows(evals: &[EvalRecord], sweeps: &[SweepRecord]) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for r in evals {
        let a = r.method.name();
        let e = &r.eval;
        rows.push(ReportRow::new("dodem", "standard", a, r.ratio, "rmse", e.rmse_standard));
        rows.push(ReportRow::new("dodem", "adversarial", a, r.ratio, "rmse", e.rmse_adversarial));
        rows.push(ReportRow::new("dodem", "dodem", a, r.ratio, "rmse", e.rmse_dodem));
        rows.push(ReportRow::new("dodem", "dodem", a, r.ratio, "improvement_vs_standard_pct", e.improvement_vs_standard));
        rows.push(ReportRow::new(
            "dodem",
            "dodem",
            a,
            r.ratio,
            "improvement_vs_adversarial_pct",
            e.improvement_vs_adversarial,
        ));
    }
    for s in sweeps {
        let b = s.sweep.best_entry();
        let kind = s.sweep.kind.name();
        rows.push(ReportRow::new("detection", kind, s.method.name(), s.ratio, "best_f2", b.f2));
        rows.push(ReportRow::new("detection", kind, s.method.name(), s.ratio, "best_param", b.param));
    }
    rows
}

// ---------------------------------------------------------------- run directory

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}

/// Which perturbed test sets a cell belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellPurpose {
    /// Crafted with the target dataset's substitute; used to tune detectors.
    Detect,
    /// Crafted per [`AttackGrid::eval_crafter`]; used for the final evaluation.
    Eval,
}

impl CellPurpose {
    fn dir(self) -> &'static str {
        match self {
            CellPurpose::Detect => "detect",
            CellPurpose::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionStage {
    pub sweeps: Vec<SweepRecord>,
    pub routing_param: f64,
    pub detector: Detector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferStage {
    pub matrix: TransferabilityMatrix,
    /// Substitute datasets for the target dataset, most damaging first.
    pub ranking: Vec<String>,
}

/// Clean and fully perturbed (FGSM, every window) test RMSE of both sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Robustness {
    pub standard_clean: f64,
    pub retrained_clean: f64,
    pub standard_perturbed: f64,
    pub retrained_perturbed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainStage {
    pub models: ModelSet,
    pub robustness: Robustness,
}

/// A manifest bound to its run directory. Every stage loads its outputs
/// when present and computes (then writes) them otherwise, so stages can
/// be run one by one or all at once.
#[derive(Debug, Clone)]
pub struct Run {
    pub manifest: ExperimentManifest,
    pub dir: PathBuf,
}

impl Run {
    pub fn open(manifest: ExperimentManifest) -> Result<Run> {
        manifest.validate()?;
        let dir = manifest.run_dir();
        save_json(&dir.join("manifest.json"), &manifest.content())?;
        Ok(Run { manifest, dir })
    }

    pub fn config_hash(&self) -> String {
        self.manifest.config_hash()
    }

    fn dataset_index(&self, id: &str) -> Result<u64> {
        self.manifest
            .datasets
            .iter()
            .position(|d| d.id == id)
            .map(|i| i as u64)
            .ok_or_else(|| Error::Config(format!("unknown dataset {id:?}")))
    }

    // ---- ingest

    pub fn dataset(&self, id: &str) -> Result<PreparedDataset> {
        let dir = self.dir.join("data").join(id);
        let summary_path = dir.join("summary.json");
        if summary_path.exists() {
            let summary: DatasetSummary = load_json(&summary_path)?;
            return Ok(PreparedDataset {
                id: id.into(),
                normalizer: load_json(&dir.join("normalizer.json"))?,
                channels: summary.informative_channels.clone(),
                train: load_windows(&dir.join("train.win"))?,
                val: load_windows(&dir.join("val.win"))?,
                test: load_windows(&dir.join("test.win"))?,
                summary,
            });
        }
        let raw = load_raw(self.manifest.dataset(id)?)?;
        let seed = self.manifest.seeds.data.wrapping_add(self.dataset_index(id)?);
        let d = prepare(id, &raw, &self.manifest.data, seed)?;
        save_windows(&dir.join("train.win"), &d.train)?;
        save_windows(&dir.join("val.win"), &d.val)?;
        save_windows(&dir.join("test.win"), &d.test)?;
        save_json(&dir.join("normalizer.json"), &d.normalizer)?;
        save_json(&summary_path, &d.summary)?;
        Ok(d)
    }

    pub fn ingest(&self) -> Result<Vec<DatasetSummary>> {
        self.manifest.datasets.iter().map(|d| Ok(self.dataset(&d.id)?.summary)).collect()
    }

    // ---- train

    pub fn substitute(&self, id: &str) -> Result<TrainedModel> {
        let path = self.dir.join("models").join(id).join("substitute.json");
        if path.exists() {
            return TrainedModel::load(&path);
        }
        let d = self.dataset(id)?;
        let seed = self.manifest.seeds.model.wrapping_add(1000 + 100 * self.dataset_index(id)?);
        let m = train_substitute(&d, &self.manifest.models, &self.manifest.train, seed)?;
        log::info!("{id}: substitute {} trained ({} epochs)", self.manifest.models.substitute, m.history.len());
        m.save(&path)?;
        Ok(m)
    }

    /// Standard target set of a dataset; member `i` is seeded with
    /// `seeds.model + 100 * dataset_index + i`. Existing checkpoints are
    /// reused.
    pub fn targets(&self, id: &str) -> Result<ModelSet> {
        let dir = self.dir.join("models").join(id);
        let base = self.manifest.seeds.model.wrapping_add(100 * self.dataset_index(id)?);
        let mut data = None;
        let mut models = Vec::new();
        for (i, &arch) in self.manifest.models.targets.iter().enumerate() {
            let path = dir.join(format!("target_{i}_{arch}.json"));
            if path.exists() {
                models.push(TrainedModel::load(&path)?);
                continue;
            }
            if data.is_none() {
                data = Some(self.dataset(id)?);
            }
            let d = data.as_ref().expect("dataset loaded");
            let w = &d.train[0].window;
            let init = build_model(&self.manifest.models.spec(arch), w.steps, w.channels, base.wrapping_add(i as u64))?;
            let m = train(&init, &d.train, &d.val, &self.manifest.train)?;
            log::info!("{id}: target {arch} trained ({} epochs)", m.history.len());
            m.save(&path)?;
            models.push(m);
        }
        if models.is_empty() {
            return Err(Error::Config("no target architectures configured".into()));
        }
        Ok(ModelSet::new(models))
    }

    pub fn train_all(&self) -> Result<()> {
        for d in &self.manifest.datasets {
            self.substitute(&d.id)?;
            self.targets(&d.id)?;
        }
        Ok(())
    }

    // ---- attack

    fn cell_seed(&self, purpose: CellPurpose, ratio: f64) -> u64 {
        let base = self.manifest.seeds.attack.wrapping_add((ratio * 1e6).round() as u64);
        match purpose {
            CellPurpose::Detect => base ^ 0x5eed_0000_0000,
            CellPurpose::Eval => base,
        }
    }

    /// One perturbed copy of the target dataset's test windows. All methods
    /// share the injection positions of a given ratio.
    pub fn attack_cell(&self, purpose: CellPurpose, method: AttackMethod, ratio: f64) -> Result<AttackCell> {
        let stem = format!("{}_{ratio}", method.name().to_ascii_lowercase());
        let dir = self.dir.join("attacks").join(purpose.dir());
        let win = dir.join(format!("{stem}.win"));
        let mask_path = dir.join(format!("{stem}.mask"));
        let seed = self.cell_seed(purpose, ratio);
        if win.exists() && mask_path.exists() {
            return Ok(AttackCell {
                method,
                ratio,
                data: PerturbedDataset {
                    samples: load_windows(&win)?,
                    mask: load_mask(&mask_path)?,
                    ratio,
                    seed,
                },
            });
        }
        let target = &self.manifest.target_dataset;
        let d = self.dataset(target)?;
        let spec = self.manifest.attack.spec(method);
        let data = match (purpose, self.manifest.attack.eval_crafter) {
            (CellPurpose::Eval, EvalCrafter::StandardTargets) => {
                inject_random(&d.test, &self.targets(target)?, &spec, ratio, seed)?
            }
            _ => inject_random(&d.test, &self.substitute(target)?, &spec, ratio, seed)?,
        };
        for (clean, adv) in d.test.iter().zip(&data.samples) {
            if clean.window.linf_distance(&adv.window) > spec.epsilon + 1e-9 {
                return Err(Error::Numeric(format!("{method} left the epsilon ball")));
            }
        }
        log::info!("{method} at ratio {ratio}: {} of {} attacked", data.attacked_count(), d.test.len());
        save_windows(&win, &data.samples)?;
        save_mask(&mask_path, &data.mask)?;
        Ok(AttackCell { method, ratio, data })
    }

    pub fn attack_cells(&self, purpose: CellPurpose) -> Result<Vec<AttackCell>> {
        let grid = &self.manifest.attack;
        let methods = match purpose {
            CellPurpose::Detect => &grid.detect_methods,
            CellPurpose::Eval => &grid.methods,
        };
        let mut out = Vec::new();
        for &m in methods {
            for &r in &grid.ratios {
                out.push(self.attack_cell(purpose, m, r)?);
            }
        }
        Ok(out)
    }

    // ---- detect

    pub fn features(&self) -> Result<FeaturePipeline> {
        let path = self.dir.join("detect").join("features.json");
        if path.exists() {
            return FeaturePipeline::from_json(&read_text(&path)?, &path);
        }
        let d = self.dataset(&self.manifest.target_dataset)?;
        let p = fit_features(&d, &self.manifest.features, self.manifest.seeds.features)?;
        write_atomic(&path, p.to_json()?.as_bytes())?;
        Ok(p)
    }

    /// Sweeps every detector over the detection cells, then fits the
    /// routing detector with the grid value of best mean F2.
    pub fn detection(&self) -> Result<DetectionStage> {
        let dir = self.dir.join("detect");
        let path = dir.join("stage.json");
        if path.exists() {
            return load_json(&path);
        }
        let grid = &self.manifest.detect;
        let features = self.features()?;
        let d = self.dataset(&self.manifest.target_dataset)?;
        let train_rows = feature_rows(&features, &thin(&d.train, grid.max_train_rows))?;
        let cells = self
            .attack_cells(CellPurpose::Detect)?
            .into_iter()
            .map(|c| {
                let rows = feature_rows(&features, &c.data.samples)?;
                Ok((c, rows))
            })
            .collect::<Result<Vec<_>>>()?;
        let sweeps = detection_sweeps(&train_rows, &cells, grid)?;
        let routing_param = select_param(&sweeps, grid.routing, grid)?;
        let detector = Detector::fit(grid.routing, &train_rows, routing_param, grid.neighbors)?;
        log::info!("routing detector {} with parameter {routing_param}", grid.routing);
        let stage = DetectionStage {
            sweeps,
            routing_param,
            detector,
        };
        write_atomic(&dir.join("sweep.csv"), sweep_csv(&stage.sweeps).as_bytes())?;
        write_atomic(&dir.join("detector.json"), stage.detector.to_json().as_bytes())?;
        save_json(&path, &stage)?;
        Ok(stage)
    }

    // ---- transfer

    pub fn transfer(&self) -> Result<TransferStage> {
        let dir = self.dir.join("transfer");
        let path = dir.join("stage.json");
        if path.exists() {
            return load_json(&path);
        }
        let mut owned = Vec::new();
        for entry in &self.manifest.datasets {
            owned.push((entry.id.clone(), self.substitute(&entry.id)?, self.targets(&entry.id)?, self.dataset(&entry.id)?));
        }
        let cells: Vec<TransferCell<'_>> = owned
            .iter()
            .map(|(id, sub, targets, d)| TransferCell {
                id: id.clone(),
                substitute: sub,
                targets,
                test: &d.test,
            })
            .collect();
        let matrix = transferability_analysis(&cells, &self.manifest.attack.spec(AttackMethod::Fgsm))?;
        let ranking = rank_substitutes(&matrix, &self.manifest.target_dataset)?;
        let stage = TransferStage { matrix, ranking };
        write_atomic(&dir.join("matrix.csv"), stage.matrix.to_csv().as_bytes())?;
        save_json(&dir.join("ranking.json"), &stage.ranking)?;
        save_json(&path, &stage)?;
        Ok(stage)
    }

    // ---- retrain

    pub fn retrain(&self) -> Result<RetrainStage> {
        let dir = self.dir.join("retrain");
        let target = &self.manifest.target_dataset;
        let n = self.manifest.models.targets.len();
        let paths: Vec<PathBuf> = self
            .manifest
            .models
            .targets
            .iter()
            .enumerate()
            .map(|(i, a)| dir.join(format!("retrained_{i}_{a}.json")))
            .collect();
        let robustness_path = dir.join("robustness.json");
        if paths.iter().all(|p| p.exists()) && robustness_path.exists() {
            let models = paths.iter().map(|p| TrainedModel::load(p)).collect::<Result<Vec<_>>>()?;
            return Ok(RetrainStage {
                models: ModelSet::new(models),
                robustness: load_json(&robustness_path)?,
            });
        }
        let standard = self.targets(target)?;
        let d = self.dataset(target)?;
        let ranking = self.transfer()?.ranking;
        let ranked = ranking
            .iter()
            .map(|id| Ok((id.clone(), self.substitute(id)?)))
            .collect::<Result<Vec<_>>>()?;
        let (models, outcomes) = retrain_targets(
            &standard,
            &d,
            &ranked,
            &self.manifest.attack,
            &self.manifest.retrain,
            &self.manifest.train,
            self.manifest.seeds.retrain,
        )?;
        debug_assert_eq!(models.len(), n);
        let robustness = robustness(&standard, &models, &d.test, &self.manifest.attack.spec(AttackMethod::Fgsm))?;
        log::info!(
            "clean {:.3} -> {:.3}, perturbed {:.3} -> {:.3}",
            robustness.standard_clean,
            robustness.retrained_clean,
            robustness.standard_perturbed,
            robustness.retrained_perturbed
        );
        for (m, p) in models.models.iter().zip(&paths) {
            m.save(p)?;
        }
        write_atomic(&dir.join("rounds.csv"), rounds_csv(&outcomes).as_bytes())?;
        save_json(&robustness_path, &robustness)?;
        Ok(RetrainStage { models, robustness })
    }

    // ---- dodem

    pub fn dodem(&self) -> Result<Vec<EvalRecord>> {
        let dir = self.dir.join("dodem");
        let path = dir.join("evaluation.json");
        if path.exists() {
            return load_json(&path);
        }
        let standard = self.targets(&self.manifest.target_dataset)?;
        let retrained = self.retrain()?.models;
        let features = self.features()?;
        let detection = self.detection()?;
        let router = DetectorRouter {
            features: &features,
            detector: &detection.detector,
        };
        let cells = self.attack_cells(CellPurpose::Eval)?;
        let records = evaluate_cells(&standard, &retrained, &router, &cells)?;
        write_atomic(&dir.join("evaluation.csv"), evaluation_csv(&records).as_bytes())?;
        save_json(&path, &records)?;
        Ok(records)
    }

    // ---- report

    pub fn report(&self) -> Result<Report> {
        let evals = self.dodem()?;
        let detection = self.detection()?;
        let mut rows = report_rows(&evals, &detection.sweeps);
        let r = self.retrain()?.robustness;
        for (series, clean, perturbed) in [
            ("standard", r.standard_clean, r.standard_perturbed),
            ("retrained", r.retrained_clean, r.retrained_perturbed),
        ] {
            rows.push(ReportRow::new("retrain", series, "none", 0.0, "rmse", clean));
            rows.push(ReportRow::new("retrain", series, "FGSM", 1.0, "rmse", perturbed));
        }
        let t = self.transfer()?;
        for (s, row) in t.matrix.datasets.iter().zip(&t.matrix.rmse) {
            for (dst, v) in t.matrix.datasets.iter().zip(row) {
                rows.push(ReportRow::new("transfer", &format!("{s}->{dst}"), "FGSM", 1.0, "rmse", *v));
            }
        }
        let config = serde_json::to_value(self.manifest.content()).map_err(|e| Error::Config(e.to_string()))?;
        let report = Report::new(self.config_hash(), self.manifest.seeds.all(), config, rows);
        report.emit(&self.dir.join("report"), "report")?;
        Ok(report)
    }
}

pub fn robustness(standard: &ModelSet, retrained: &ModelSet, test: &[WindowedSample], fgsm: &AttackSpec) -> Result<Robustness> {
    let perturbed = attack_all(standard, test, fgsm)?;
    Ok(Robustness {
        standard_clean: rmse_of(standard, test)?,
        retrained_clean: rmse_of(retrained, test)?,
        standard_perturbed: rmse_of(standard, &perturbed)?,
        retrained_perturbed: rmse_of(retrained, &perturbed)?,
    })
}
