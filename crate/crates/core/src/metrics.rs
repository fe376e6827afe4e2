//! Regression and detection metrics, and report emission.
//!
//! Reports are written in long format, one row per
//! `(experiment, series, attack, ratio, metric)`:
//!
//! ```text
//! experiment,series,attack,ratio,metric,value
//! dodem,standard,fgsm,0.2,rmse,31.4
//! ```
//!
//! Alongside the CSV a JSON document carries the same rows plus the schema
//! version, the config hash, the seeds and the resolved configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            expected: truth.len().to_string(),
            got: pred.len().to_string(),
        });
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Detection counts with "attack" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_labels(predicted: &[bool], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::Shape {
                expected: truth.len().to_string(),
                got: predicted.len().to_string(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f_beta(&self, beta: f64) -> f64 {
        f_beta(self.tp, self.fp, self.fn_, beta)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// `(1 + b^2) P R / (b^2 P + R)`, 0 when undefined.
pub fn f_beta(tp: usize, fp: usize, fn_: usize, beta: f64) -> f64 {
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    f_beta_pr(p, r, beta)
}

pub fn f_beta_pr(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, computed from mid-ranks.
pub fn roc_auc(scores: &[f64], mask: &[bool]) -> Result<f64> {
    if scores.len() != mask.len() {
        return Err(Error::Shape {
            expected: mask.len().to_string(),
            got: scores.len().to_string(),
        });
    }
    let pos = mask.iter().filter(|&&m| m).count();
    let neg = mask.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("ROC AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| mask[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// `100 (base - new) / base`.
pub fn improvement_pct(base: f64, new: f64) -> Result<f64> {
    if !(base > 0.0) {
        return Err(Error::Precondition(format!("improvement needs a positive baseline, got {base}")));
    }
    Ok(100.0 * (base - new) / base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub series: String,
    pub attack: String,
    pub ratio: f64,
    pub metric: String,
    pub value: f64,
}

impl ReportRow {
    pub fn new(experiment: &str, series: &str, attack: &str, ratio: f64, metric: &str, value: f64) -> Self {
        ReportRow {
            experiment: experiment.into(),
            series: series.into(),
            attack: attack.into(),
            ratio,
            metric: metric.into(),
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(config_hash: String, seeds: Vec<u64>, config: serde_json::Value, rows: Vec<ReportRow>) -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            config_hash,
            seeds,
            config,
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,series,attack,ratio,metric,value\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{:?},{},{:?}", r.experiment, r.series, r.attack, r.ratio, r.metric, r.value).unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// Writes `<stem>.csv` and `<stem>.json` under `dir`.
    pub fn emit(&self, dir: &Path, stem: &str) -> Result<()> {
        write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        write_atomic(&dir.join(format!("{stem}.json")), self.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn auc_by_pairs(scores: &[f64], mask: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if mask[i] && !mask[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn f_beta_cases() {
        assert_eq!(f_beta(5, 0, 0, 2.0), 1.0);
        assert!((f_beta(1, 1, 0, 2.0) - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(f_beta(0, 3, 4, 2.0), 0.0);
        assert_eq!(f_beta_pr(0.2, 0.8, 1.0), f_beta_pr(0.8, 0.2, 1.0));
        assert!(f_beta_pr(0.2, 0.8, 2.0) > f_beta_pr(0.8, 0.2, 2.0));
        let c = Confusion::from_labels(&[true, true, false, false], &[true, false, true, false]).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1, 1, 1, 1));
        assert_eq!(c.precision(), 0.5);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[1.0; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        let s = [0.3, 0.3, 0.7, 0.1, 0.7, 0.5];
        let m = [true, false, true, false, false, true];
        assert_eq!(roc_auc(&s, &m).unwrap(), auc_by_pairs(&s, &m));
    }

    #[test]
    fn improvement_cases() {
        assert_eq!(improvement_pct(10.0, 6.0).unwrap(), 40.0);
        assert_eq!(improvement_pct(10.0, 10.0).unwrap(), 0.0);
        assert!(improvement_pct(10.0, 12.0).unwrap() < 0.0);
        assert!(improvement_pct(0.0, 1.0).is_err());
    }

    #[test]
    fn report_emission_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            ReportRow::new("dodem", "standard", "fgsm", 0.2, "rmse", 31.25),
            ReportRow::new("dodem", "dodem", "fgsm", 0.2, "rmse", 20.5),
        ];
        let r = Report::new("abc".into(), vec![1, 2], serde_json::json!({"k": 20}), rows);
        r.emit(dir.path(), "eval").unwrap();
        let first = std::fs::read(dir.path().join("eval.csv")).unwrap();
        let first_json = std::fs::read(dir.path().join("eval.json")).unwrap();
        r.emit(dir.path(), "eval").unwrap();
        assert_eq!(first, std::fs::read(dir.path().join("eval.csv")).unwrap());
        assert_eq!(first_json, std::fs::read(dir.path().join("eval.json")).unwrap());
        assert_eq!(String::from_utf8(first).unwrap().lines().count(), 3);
        let v: serde_json::Value = serde_json::from_slice(&first_json).unwrap();
        for key in ["schema_version", "config_hash", "seeds", "config", "rows"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    proptest! {
        #[test]
        fn auc_matches_pairs_and_is_rank_invariant(
            pts in proptest::collection::vec((0u8..6, any::<bool>()), 2..30)
        ) {
            let scores: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
            let mask: Vec<bool> = pts.iter().map(|p| p.1).collect();
            prop_assume!(mask.iter().any(|&m| m) && mask.iter().any(|&m| !m));
            let a = roc_auc(&scores, &mask).unwrap();
            prop_assert!((a - auc_by_pairs(&scores, &mask)).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() - 3.0).collect();
            prop_assert_eq!(a, roc_auc(&warped, &mask).unwrap());
        }

        #[test]
        fn rmse_is_homogeneous(errs in proptest::collection::vec(-50.0f64..50.0, 1..20), c in -4.0f64..4.0) {
            let zeros = vec![0.0; errs.len()];
            let scaled: Vec<f64> = errs.iter().map(|e| c * e).collect();
            let a = rmse(&scaled, &zeros).unwrap();
            let b = c.abs() * rmse(&errs, &zeros).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b));
        }
    }
}
