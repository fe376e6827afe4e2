//! Transferability analysis, adversarial retraining and selective routing.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attack::{attack_all, inject_random, injection_indices, AttackMethod, AttackSpec, PerturbedDataset};
use crate::data::WindowedSample;
use crate::detect::{DetectionResult, Detector};
use crate::error::{Error, Result};
use crate::features::FeaturePipeline;
use crate::metrics::{improvement_pct, rmse};
use crate::nn::{build_model, train, ModelSet, ModelSpec, Regressor, TrainConfig, TrainedModel};

/// Trains one model per spec; model `i` is seeded with `seed + i`.
pub fn standard_train(
    specs: &[ModelSpec],
    train_set: &[WindowedSample],
    val_set: &[WindowedSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelSet> {
    if specs.is_empty() {
        return Err(Error::Config("no model specs given".into()));
    }
    let first = train_set.first().ok_or(Error::EmptyInput)?;
    let (steps, channels) = (first.window.steps, first.window.channels);
    let models = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let init = build_model(spec, steps, channels, seed.wrapping_add(i as u64))?;
            let m = train(&init, train_set, val_set, cfg)?;
            log::info!("trained {} ({} epochs)", spec.architecture, m.history.len());
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelSet::new(models))
}

/// RMSE of a regressor over samples, unclamped.
pub fn rmse_of(model: &dyn Regressor, samples: &[WindowedSample]) -> Result<f64> {
    let pred = model.predict_all(samples);
    let truth: Vec<f64> = samples.iter().map(|s| s.rul).collect();
    rmse(&pred, &truth)
}

/// Mean over the set's members of each member's RMSE.
pub fn mean_member_rmse(set: &ModelSet, samples: &[WindowedSample]) -> Result<f64> {
    let total = set.models.iter().map(|m| rmse_of(m, samples)).sum::<Result<f64>>()?;
    Ok(total / set.len() as f64)
}

// ---------------------------------------------------------------- transfer

/// `rmse[s][d]`: mean target RMSE on dataset `d`'s test windows attacked
/// with the substitute trained on dataset `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferabilityMatrix {
    pub datasets: Vec<String>,
    pub rmse: Vec<Vec<f64>>,
}

impl TransferabilityMatrix {
    fn index(&self, id: &str) -> Result<usize> {
        self.datasets
            .iter()
            .position(|d| d == id)
            .ok_or_else(|| Error::Config(format!("dataset {id:?} not in transferability matrix")))
    }

    pub fn get(&self, source: &str, destination: &str) -> Result<f64> {
        Ok(self.rmse[self.index(source)?][self.index(destination)?])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("substitute_dataset,target_dataset,rmse\n");
        for (s, row) in self.datasets.iter().zip(&self.rmse) {
            for (d, v) in self.datasets.iter().zip(row) {
                writeln!(out, "{s},{d},{v:?}").unwrap();
            }
        }
        out
    }
}

/// One dataset's trained substitute, target set and test windows.
pub struct TransferCell<'a> {
    pub id: String,
    pub substitute: &'a TrainedModel,
    pub targets: &'a ModelSet,
    pub test: &'a [WindowedSample],
}

pub fn transferability_analysis(cells: &[TransferCell<'_>], attack: &AttackSpec) -> Result<TransferabilityMatrix> {
    if cells.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rows = Vec::with_capacity(cells.len());
    for src in cells {
        let mut row = Vec::with_capacity(cells.len());
        for dst in cells {
            let adv = attack_all(src.substitute, dst.test, attack)?;
            let v = mean_member_rmse(dst.targets, &adv)?;
            log::info!("transfer {} -> {}: {v:.3}", src.id, dst.id);
            row.push(v);
        }
        rows.push(row);
    }
    Ok(TransferabilityMatrix {
        datasets: cells.iter().map(|c| c.id.clone()).collect(),
        rmse: rows,
    })
}

/// Substitutes for `target` by descending RMSE, stable on ties, without
/// the target's own dataset.
pub fn rank_substitutes(m: &TransferabilityMatrix, target: &str) -> Result<Vec<String>> {
    let d = m.index(target)?;
    let mut order: Vec<usize> = (0..m.datasets.len()).filter(|&s| s != d).collect();
    order.sort_by(|&a, &b| m.rmse[b][d].total_cmp(&m.rmse[a][d]));
    Ok(order.into_iter().map(|s| m.datasets[s].clone()).collect())
}

// ---------------------------------------------------------------- retrain

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainPlan {
    pub target: String,
    /// Ranked substitute datasets.
    pub substitutes: Vec<String>,
    /// Crafted samples per round as a fraction of the training set.
    pub budget: f64,
    pub extra_epochs: usize,
    /// Upper bound on accepted rounds.
    pub max_rounds: usize,
    /// Crafting attack for training samples.
    pub attack: AttackSpec,
    /// Fraction of the validation set attacked for the acceptance check.
    pub validation_ratio: f64,
    pub seed: u64,
}

impl RetrainPlan {
    pub fn new(target: &str, substitutes: Vec<String>) -> Self {
        RetrainPlan {
            target: target.into(),
            substitutes,
            budget: 0.01,
            extra_epochs: 30,
            max_rounds: 1,
            attack: AttackSpec::new(AttackMethod::Fgsm),
            validation_ratio: 0.2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return Err(Error::Config(format!("retraining budget must lie in (0, 1], got {}", self.budget)));
        }
        if self.substitutes.iter().any(|s| s == &self.target) {
            return Err(Error::Config(format!("substitute list contains the target dataset {}", self.target)));
        }
        self.attack.validate()
    }
}

/// Crafted samples per round.
pub fn craft_budget(budget: f64, n: usize) -> usize {
    ((budget * n as f64).round() as usize).min(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    NoImprovement,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub substitute: String,
    pub crafted: usize,
    pub val_rmse: f64,
    pub accepted: bool,
    /// Best validation RMSE after this round.
    pub best_val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainOutcome {
    pub model: TrainedModel,
    pub baseline_val_rmse: f64,
    pub rounds: Vec<RoundLog>,
    pub stop: StopReason,
}

/// Validation set attacked at the plan's ratio with `crafter`.
pub fn perturbed_validation(val: &[WindowedSample], crafter: &dyn Regressor, plan: &RetrainPlan) -> Result<Vec<WindowedSample>> {
    Ok(inject_random(val, crafter, &plan.attack, plan.validation_ratio, plan.seed ^ 0x7a1d)?.samples)
}

/// Adds substitutes in ranked order. Each round crafts
/// `round(budget * |train|)` samples with the round's substitute (clean
/// labels kept), continues training the current model on clean plus
/// crafted data for up to `extra_epochs` epochs (early stopping on
/// `val_perturbed`, as in standard training) and keeps the result only if
/// `val_perturbed` RMSE improves.
pub fn adversarial_retrain(
    target: &TrainedModel,
    train_set: &[WindowedSample],
    val_perturbed: &[WindowedSample],
    plan: &RetrainPlan,
    substitutes: &[&dyn Regressor],
    cfg: &TrainConfig,
) -> Result<RetrainOutcome> {
    plan.validate()?;
    if substitutes.len() != plan.substitutes.len() {
        return Err(Error::Shape {
            expected: format!("{} substitutes", plan.substitutes.len()),
            got: substitutes.len().to_string(),
        });
    }
    let baseline = rmse_of(target, val_perturbed)?;
    let mut current = target.clone();
    let mut best = baseline;
    let mut rounds = Vec::new();
    let mut stop = StopReason::Exhausted;
    for (round, (name, sub)) in plan.substitutes.iter().zip(substitutes).take(plan.max_rounds).enumerate() {
        let idx = injection_indices(train_set.len(), plan.budget, plan.seed.wrapping_add(round as u64));
        let mut data = train_set.to_vec();
        for &i in &idx {
            let s = &train_set[i];
            data.push(WindowedSample {
                window: plan.attack.craft(*sub, &s.window, s.rul)?,
                ..s.clone()
            });
        }
        let round_cfg = TrainConfig {
            max_epochs: plan.extra_epochs,
            ..cfg.clone()
        };
        let candidate = train(&current, &data, val_perturbed, &round_cfg)?;
        let v = rmse_of(&candidate, val_perturbed)?;
        let accepted = v < best;
        if accepted {
            best = v;
            current = candidate;
        }
        log::info!("retrain {} round {round} with {name}: {} crafted, val {v:.3}, accepted {accepted}", target.architecture(), idx.len());
        rounds.push(RoundLog {
            round,
            substitute: name.clone(),
            crafted: idx.len(),
            val_rmse: v,
            accepted,
            best_val_rmse: best,
        });
        if !accepted {
            stop = StopReason::NoImprovement;
            break;
        }
    }
    Ok(RetrainOutcome {
        model: current,
        baseline_val_rmse: baseline,
        rounds,
        stop,
    })
}

/// Retrains every member of `standard` under the same plan. Each member's
/// acceptance set is `val` attacked white-box against that member at the
/// plan's validation ratio.
pub fn retrain_set(
    standard: &ModelSet,
    train_set: &[WindowedSample],
    val: &[WindowedSample],
    plan: &RetrainPlan,
    substitutes: &[&dyn Regressor],
    cfg: &TrainConfig,
) -> Result<(ModelSet, Vec<RetrainOutcome>)> {
    let outcomes = standard
        .models
        .iter()
        .map(|m| {
            let val_perturbed = perturbed_validation(val, m, plan)?;
            adversarial_retrain(m, train_set, &val_perturbed, plan, substitutes, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let set = ModelSet::new(outcomes.iter().map(|o| o.model.clone()).collect());
    Ok((set, outcomes))
}

// ---------------------------------------------------------------- routing

/// Decides per sample whether it is under attack.
pub trait Router {
    fn route(&self, index: usize, sample: &WindowedSample) -> Result<DetectionResult>;
}

/// Feature pipeline plus fitted detector.
pub struct DetectorRouter<'a> {
    pub features: &'a FeaturePipeline,
    pub detector: &'a Detector,
}

impl Router for DetectorRouter<'_> {
    fn route(&self, _index: usize, sample: &WindowedSample) -> Result<DetectionResult> {
        let f = self.features.featurize(&sample.window)?;
        Ok(self.detector.decide(f.as_slice()))
    }
}

/// Reads the ground-truth attack mask.
pub struct OracleRouter<'a>(pub &'a [bool]);

impl Router for OracleRouter<'_> {
    fn route(&self, index: usize, _sample: &WindowedSample) -> Result<DetectionResult> {
        let attack = *self.0.get(index).ok_or_else(|| Error::Precondition(format!("no mask entry for sample {index}")))?;
        Ok(DetectionResult {
            attack,
            score: if attack { 1.0 } else { 0.0 },
        })
    }
}

/// Always answers the same.
pub struct FixedRouter(pub bool);

impl Router for FixedRouter {
    fn route(&self, _index: usize, _sample: &WindowedSample) -> Result<DetectionResult> {
        Ok(DetectionResult {
            attack: self.0,
            score: if self.0 { 1.0 } else { 0.0 },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Standard,
    Retrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Routed {
    pub rul: f64,
    pub route: Route,
    pub detection: DetectionResult,
}

/// Standard and retrained model sets sharing specs one-to-one, plus the
/// detection stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DodemPipeline {
    pub features: FeaturePipeline,
    pub detector: Detector,
    pub standard: ModelSet,
    pub retrained: ModelSet,
}

impl DodemPipeline {
    pub fn new(features: FeaturePipeline, detector: Detector, standard: ModelSet, retrained: ModelSet) -> Result<Self> {
        if standard.len() != retrained.len()
            || standard.models.iter().zip(&retrained.models).any(|(a, b)| a.spec != b.spec)
        {
            return Err(Error::Config("standard and retrained sets must share specs one-to-one".into()));
        }
        Ok(DodemPipeline {
            features,
            detector,
            standard,
            retrained,
        })
    }

    pub fn router(&self) -> DetectorRouter<'_> {
        DetectorRouter {
            features: &self.features,
            detector: &self.detector,
        }
    }

    pub fn selective_infer(&self, sample: &WindowedSample) -> Result<Routed> {
        selective_infer(&self.standard, &self.retrained, &self.router(), 0, sample)
    }
}

/// Attack verdicts go to the retrained set, the rest to the standard set.
pub fn selective_infer(
    standard: &ModelSet,
    retrained: &ModelSet,
    router: &dyn Router,
    index: usize,
    sample: &WindowedSample,
) -> Result<Routed> {
    let detection = router.route(index, sample)?;
    let (route, set) = if detection.attack {
        (Route::Retrained, retrained)
    } else {
        (Route::Standard, standard)
    };
    Ok(Routed {
        rul: set.predict_window(&sample.window),
        route,
        detection,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DodemEvaluation {
    pub rmse_standard: f64,
    pub rmse_adversarial: f64,
    pub rmse_dodem: f64,
    pub improvement_vs_standard: f64,
    pub improvement_vs_adversarial: f64,
    pub routed_retrained: usize,
    pub samples: usize,
    /// Member-wise RMSE of the standard and retrained sets.
    pub standard_members: Vec<f64>,
    pub adversarial_members: Vec<f64>,
}

/// RMSE of the three strategies on the same perturbed set.
pub fn evaluate_dodem(
    standard: &ModelSet,
    retrained: &ModelSet,
    router: &dyn Router,
    perturbed: &PerturbedDataset,
) -> Result<DodemEvaluation> {
    let samples = &perturbed.samples;
    let truth: Vec<f64> = samples.iter().map(|s| s.rul).collect();
    let std_pred = standard.predict_all(samples);
    let adv_pred = retrained.predict_all(samples);
    let mut dodem = Vec::with_capacity(samples.len());
    let mut routed_retrained = 0;
    for (i, s) in samples.iter().enumerate() {
        if router.route(i, s)?.attack {
            routed_retrained += 1;
            dodem.push(adv_pred[i]);
        } else {
            dodem.push(std_pred[i]);
        }
    }
    let rmse_standard = rmse(&std_pred, &truth)?;
    let rmse_adversarial = rmse(&adv_pred, &truth)?;
    let rmse_dodem = rmse(&dodem, &truth)?;
    Ok(DodemEvaluation {
        rmse_standard,
        rmse_adversarial,
        rmse_dodem,
        improvement_vs_standard: improvement_pct(rmse_standard, rmse_dodem)?,
        improvement_vs_adversarial: improvement_pct(rmse_adversarial, rmse_dodem)?,
        routed_retrained,
        samples: samples.len(),
        standard_members: standard.models.iter().map(|m| rmse_of(m, samples)).collect::<Result<_>>()?,
        adversarial_members: retrained.models.iter().map(|m| rmse_of(m, samples)).collect::<Result<_>>()?,
    })
}
