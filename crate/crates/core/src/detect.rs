//! One-class novelty detectors fitted on clean feature rows.
//!
//! Both detectors z-score their inputs with a scaler fitted on the training
//! rows and report a score where higher means more anomalous.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{roc_auc, Confusion};

/// The hyperparameter grid used for both `nu` and the LOF contamination.
pub const DEFAULT_GRID: [f64; 6] = [0.001, 0.005, 0.01, 0.05, 0.1, 0.2];
pub const DEFAULT_NEIGHBORS: usize = 20;
pub const KKT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Constant columns keep unit scale so they map to 0.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let d = check_rows(rows)?;
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v.sqrt() < 1e-12 {
                    1.0
                } else {
                    v.sqrt()
                }
            })
            .collect();
        Ok(Scaler { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    let d = rows.first().ok_or(Error::EmptyInput)?.len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Shape {
            expected: d.to_string(),
            got: r.len().to_string(),
        });
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub attack: bool,
    pub score: f64,
}

// ---------------------------------------------------------------- ocsvm

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub scaler: Scaler,
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub nu: f64,
    pub n_train: usize,
    pub iterations: usize,
    pub duality_gap: f64,
}

/// `1 / (d * mean column variance)` of already standardised rows.
pub fn default_gamma(std_rows: &[Vec<f64>]) -> f64 {
    let d = std_rows[0].len();
    let n = std_rows.len() as f64;
    let var: f64 = (0..d)
        .map(|j| {
            let m = std_rows.iter().map(|r| r[j]).sum::<f64>() / n;
            std_rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / d as f64;
    if var > 0.0 {
        1.0 / (d as f64 * var)
    } else {
        1.0 / d as f64
    }
}

/// Solves `min 1/2 a'Ka` subject to `0 <= a_i <= 1/(nu n)` and `sum a = 1`
/// by maximal-violating-pair SMO. `gamma = None` uses [`default_gamma`].
pub fn ocsvm_fit(rows: &[Vec<f64>], nu: f64, gamma: Option<f64>) -> Result<OcsvmModel> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::Config(format!("nu must lie in (0, 1], got {nu}")));
    }
    check_rows(rows)?;
    let n = rows.len();
    if n < 2 {
        return Err(Error::Precondition(format!("one-class SVM needs >= 2 rows, got {n}")));
    }
    let scaler = Scaler::fit(rows)?;
    let x: Vec<Vec<f64>> = rows.iter().map(|r| scaler.apply(r)).collect();
    let gamma = gamma.unwrap_or_else(|| default_gamma(&x));
    let c = 1.0 / (nu * n as f64);

    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = rbf(&x[i], &x[j], gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }

    let mut alpha = vec![0.0; n];
    let mut left = 1.0;
    for a in alpha.iter_mut() {
        if left <= 0.0 {
            break;
        }
        *a = c.min(left);
        left -= *a;
    }
    let mut g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i * n + j] * alpha[j]).sum()).collect();

    let max_iter = (100 * n).max(1_000_000);
    let mut iterations = 0;
    loop {
        // i raises its coefficient, j lowers it.
        let mut i_up = None;
        let mut j_low = None;
        for t in 0..n {
            if alpha[t] < c && i_up.is_none_or(|i: usize| g[t] < g[i]) {
                i_up = Some(t);
            }
            if alpha[t] > 0.0 && j_low.is_none_or(|j: usize| g[t] > g[j]) {
                j_low = Some(t);
            }
        }
        let (Some(i), Some(j)) = (i_up, j_low) else { break };
        let violation = g[j] - g[i];
        if violation < KKT_TOLERANCE {
            break;
        }
        if iterations >= max_iter {
            let gap = duality_gap(&alpha, &g, c, rho_from(&alpha, &g, c));
            return Err(Error::NoConvergence {
                passes: iterations,
                violation,
                gap,
            });
        }
        iterations += 1;
        let curvature = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(1e-12);
        let mut delta = violation / curvature;
        delta = delta.min(c - alpha[i]).min(alpha[j]);
        if delta == c - alpha[i] {
            alpha[j] -= delta;
            alpha[i] = c;
        } else if delta == alpha[j] {
            alpha[i] += delta;
            alpha[j] = 0.0;
        } else {
            alpha[i] += delta;
            alpha[j] -= delta;
        }
        for (t, gt) in g.iter_mut().enumerate() {
            *gt += delta * (k[t * n + i] - k[t * n + j]);
        }
    }

    // Recompute the gradient in the same order the decision function uses.
    let active: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    let g: Vec<f64> = (0..n).map(|t| active.iter().map(|&s| alpha[s] * k[s * n + t]).sum()).collect();
    let rho = rho_from(&alpha, &g, c);
    let gap = duality_gap(&alpha, &g, c, rho);
    Ok(OcsvmModel {
        scaler,
        support: active.iter().map(|&s| x[s].clone()).collect(),
        coef: active.iter().map(|&s| alpha[s]).collect(),
        rho,
        gamma,
        nu,
        n_train: n,
        iterations,
        duality_gap: gap,
    })
}

/// The smallest gradient among coefficients below the cap, so only capped
/// points can fall outside the boundary. Within the KKT tolerance this is
/// the exact offset.
fn rho_from(alpha: &[f64], g: &[f64], c: f64) -> f64 {
    let below_cap = (0..alpha.len()).filter(|&t| alpha[t] < c).map(|t| g[t]).fold(f64::INFINITY, f64::min);
    if below_cap.is_finite() {
        below_cap
    } else {
        g.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Primal minus dual objective at `(alpha, rho)`.
fn duality_gap(alpha: &[f64], g: &[f64], c: f64, rho: f64) -> f64 {
    let quad: f64 = alpha.iter().zip(g).map(|(a, gi)| a * gi).sum();
    let slack: f64 = g.iter().map(|gi| (rho - gi).max(0.0)).sum();
    quad - rho + c * slack
}

impl OcsvmModel {
    /// `rho - sum a_i k(x_i, f)`; positive means outside the learned region.
    pub fn score(&self, f: &[f64]) -> f64 {
        let z = self.scaler.apply(f);
        self.rho - self.support.iter().zip(&self.coef).map(|(s, a)| a * rbf(s, &z, self.gamma)).sum::<f64>()
    }

    pub fn decide(&self, f: &[f64]) -> DetectionResult {
        let score = self.score(f);
        DetectionResult { attack: score > 0.0, score }
    }

    pub fn coef_sum(&self) -> f64 {
        self.coef.iter().sum()
    }
}

// ---------------------------------------------------------------- lof

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofModel {
    pub scaler: Scaler,
    pub train: Vec<Vec<f64>>,
    pub k: usize,
    pub contamination: f64,
    pub k_distance: Vec<f64>,
    pub lrd: Vec<f64>,
    pub train_scores: Vec<f64>,
    pub threshold: f64,
}

const LRD_GUARD: f64 = 1e-10;

/// Indices and distances of the `k` nearest rows, ties broken by index.
fn nearest(train: &[Vec<f64>], q: &[f64], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> =
        train.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(i, r)| (i, sq_dist(r, q).sqrt())).collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(k);
    d
}

/// Linear-interpolation quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn lof_fit(rows: &[Vec<f64>], k: usize, contamination: f64) -> Result<LofModel> {
    if k == 0 {
        return Err(Error::Config("LOF needs k >= 1".into()));
    }
    if !(contamination > 0.0 && contamination <= 0.5) {
        return Err(Error::Config(format!("contamination must lie in (0, 0.5], got {contamination}")));
    }
    check_rows(rows)?;
    if rows.len() <= k {
        return Err(Error::Precondition(format!("LOF needs more than k = {k} rows, got {}", rows.len())));
    }
    let scaler = Scaler::fit(rows)?;
    let train: Vec<Vec<f64>> = rows.iter().map(|r| scaler.apply(r)).collect();
    let neighbors: Vec<Vec<(usize, f64)>> = (0..train.len()).map(|i| nearest(&train, &train[i], k, Some(i))).collect();
    let k_distance: Vec<f64> = neighbors.iter().map(|nb| nb[k - 1].1).collect();
    let lrd: Vec<f64> = neighbors
        .iter()
        .map(|nb| {
            let reach = nb.iter().map(|&(o, d)| d.max(k_distance[o])).sum::<f64>() / k as f64;
            1.0 / (reach + LRD_GUARD)
        })
        .collect();
    let train_scores: Vec<f64> = neighbors
        .iter()
        .zip(&lrd)
        .map(|(nb, &own)| nb.iter().map(|&(o, _)| lrd[o]).sum::<f64>() / k as f64 / own)
        .collect();
    let threshold = quantile(&train_scores, 1.0 - contamination);
    Ok(LofModel {
        scaler,
        train,
        k,
        contamination,
        k_distance,
        lrd,
        train_scores,
        threshold,
    })
}

impl LofModel {
    /// Novelty-mode LOF: neighbours come from the training rows only.
    pub fn score(&self, f: &[f64]) -> f64 {
        let z = self.scaler.apply(f);
        let nb = nearest(&self.train, &z, self.k, None);
        let reach = nb.iter().map(|&(o, d)| d.max(self.k_distance[o])).sum::<f64>() / self.k as f64;
        let own = 1.0 / (reach + LRD_GUARD);
        nb.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / self.k as f64 / own
    }

    pub fn decide(&self, f: &[f64]) -> DetectionResult {
        let score = self.score(f);
        DetectionResult {
            attack: score > self.threshold,
            score,
        }
    }
}

// ---------------------------------------------------------------- family

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Ocsvm,
    Lof,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 2] = [DetectorKind::Ocsvm, DetectorKind::Lof];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Ocsvm => "ocsvm",
            DetectorKind::Lof => "lof",
        }
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ocsvm" => Ok(DetectorKind::Ocsvm),
            "lof" => Ok(DetectorKind::Lof),
            other => Err(Error::Config(format!("unknown detector {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Detector {
    Ocsvm(OcsvmModel),
    Lof(LofModel),
}

impl Detector {
    /// `param` is `nu` for the SVM and the contamination for LOF.
    pub fn fit(kind: DetectorKind, rows: &[Vec<f64>], param: f64, k: usize) -> Result<Self> {
        Ok(match kind {
            DetectorKind::Ocsvm => Detector::Ocsvm(ocsvm_fit(rows, param, None)?),
            DetectorKind::Lof => Detector::Lof(lof_fit(rows, k, param)?),
        })
    }

    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::Ocsvm(_) => DetectorKind::Ocsvm,
            Detector::Lof(_) => DetectorKind::Lof,
        }
    }

    pub fn decide(&self, f: &[f64]) -> DetectionResult {
        match self {
            Detector::Ocsvm(m) => m.decide(f),
            Detector::Lof(m) => m.decide(f),
        }
    }

    pub fn decide_all(&self, rows: &[Vec<f64>]) -> Vec<DetectionResult> {
        rows.iter().map(|r| self.decide(r)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("detector serialises")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub param: f64,
    pub f2: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub kind: DetectorKind,
    pub entries: Vec<SweepEntry>,
    pub best: usize,
}

impl Sweep {
    pub fn best_entry(&self) -> &SweepEntry {
        &self.entries[self.best]
    }
}

/// Fits one detector per grid value on `train`, scores `test` against
/// `mask` and keeps the highest F2 (ties go to the smaller value).
pub fn sweep_best_f2(
    kind: DetectorKind,
    train: &[Vec<f64>],
    test: &[Vec<f64>],
    mask: &[bool],
    grid: &[f64],
    k: usize,
) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::Config("detector grid is empty".into()));
    }
    let mut params = grid.to_vec();
    params.sort_by(f64::total_cmp);
    params.dedup();
    let mut entries = Vec::with_capacity(params.len());
    let mut best = 0;
    for (idx, &param) in params.iter().enumerate() {
        let det = Detector::fit(kind, train, param, k)?;
        let results = det.decide_all(test);
        let labels: Vec<bool> = results.iter().map(|r| r.attack).collect();
        let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
        let c = Confusion::from_labels(&labels, mask)?;
        let entry = SweepEntry {
            param,
            f2: c.f_beta(2.0),
            precision: c.precision(),
            recall: c.recall(),
            auc: roc_auc(&scores, mask).ok(),
        };
        log::info!("{kind} param {param}: F2 {:.4} P {:.4} R {:.4}", entry.f2, entry.precision, entry.recall);
        if entry.f2 > entries.get(best).map_or(f64::NEG_INFINITY, |e: &SweepEntry| e.f2) {
            best = idx;
        }
        entries.push(entry);
    }
    Ok(Sweep { kind, entries, best })
}

/// `sample_id,score,label,mask` with label `attack` or `normal`.
pub fn detection_csv(results: &[DetectionResult], mask: &[bool]) -> String {
    let mut out = String::from("sample_id,score,label,mask\n");
    for (i, (r, &m)) in results.iter().zip(mask).enumerate() {
        let label = if r.attack { "attack" } else { "normal" };
        writeln!(out, "{i},{:?},{label},{}", r.score, u8::from(m)).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn blob(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
    }

    /// Textbook LOF written independently of the model code.
    fn brute_lof(train: &[Vec<f64>], queries: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<f64>) {
        let n = train.len();
        let d = train[0].len();
        let mean: Vec<f64> = (0..d).map(|j| train.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let sd: Vec<f64> = (0..d)
            .map(|j| (train.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64).sqrt())
            .collect();
        let z = |r: &Vec<f64>| -> Vec<f64> { (0..d).map(|j| (r[j] - mean[j]) / sd[j]).collect() };
        let t: Vec<Vec<f64>> = train.iter().map(z).collect();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let knn = |q: &[f64], skip: Option<usize>| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..n).filter(|&i| Some(i) != skip).collect();
            idx.sort_by(|&a, &b| dist(&t[a], q).partial_cmp(&dist(&t[b], q)).unwrap().then(a.cmp(&b)));
            idx.truncate(k);
            idx
        };
        let kd: Vec<f64> = (0..n).map(|i| dist(&t[i], &t[*knn(&t[i], Some(i)).last().unwrap()])).collect();
        let lrd_of = |q: &[f64], nb: &[usize]| {
            let s: f64 = nb.iter().map(|&o| kd[o].max(dist(q, &t[o]))).sum();
            1.0 / (s / k as f64 + 1e-10)
        };
        let lrd: Vec<f64> = (0..n).map(|i| lrd_of(&t[i], &knn(&t[i], Some(i)))).collect();
        let lof = |q: &[f64], nb: Vec<usize>| nb.iter().map(|&o| lrd[o]).sum::<f64>() / k as f64 / lrd_of(q, &nb);
        let train_scores = (0..n).map(|i| lof(&t[i], knn(&t[i], Some(i)))).collect();
        let query_scores = queries.iter().map(|q| {
            let zq = z(q);
            lof(&zq, knn(&zq, None))
        });
        (train_scores, query_scores.collect())
    }

    #[test]
    fn lof_matches_brute_force() {
        let train = blob(200, 5, 1);
        let queries: Vec<Vec<f64>> = blob(40, 5, 2).into_iter().map(|r| r.iter().map(|v| 1.5 * v).collect()).collect();
        let m = lof_fit(&train, 20, 0.1).unwrap();
        let (bt, bq) = brute_lof(&train, &queries, 20);
        for (a, b) in m.train_scores.iter().zip(&bt) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
        for (q, b) in queries.iter().zip(&bq) {
            let r = m.decide(q);
            assert!((r.score - b).abs() <= 1e-9);
            assert_eq!(r.attack, *b > quantile(&bt, 0.9));
        }
    }

    #[test]
    fn lof_grid_and_outlier() {
        let grid: Vec<Vec<f64>> = (0..15).flat_map(|i| (0..15).map(move |j| vec![i as f64, j as f64])).collect();
        let m = lof_fit(&grid, 4, 0.1).unwrap();
        let inner: Vec<f64> = (0..grid.len())
            .filter(|&t| {
                let (i, j) = (t / 15, t % 15);
                (2..13).contains(&i) && (2..13).contains(&j)
            })
            .map(|t| m.train_scores[t])
            .collect();
        assert!(inner.iter().all(|s| (0.95..=1.05).contains(s)));

        let mut cluster = blob(60, 2, 3).into_iter().map(|r| vec![0.1 * r[0], 0.1 * r[1]]).collect::<Vec<_>>();
        cluster.push(vec![5.0, 5.0]);
        let m = lof_fit(&cluster, 20, 0.05).unwrap();
        assert!(m.train_scores[60] > 1.5);
        assert!(m.decide(&[5.0, 5.0]).attack);
    }

    #[test]
    fn lof_requery_is_about_one_and_monotone_along_a_ray() {
        let train = blob(100, 3, 4);
        let m = lof_fit(&train, 20, 0.1).unwrap();
        assert!((m.score(&train[7]) - m.train_scores[7]).abs() < 0.35);
        let mut last = 0.0;
        for step in 0..30 {
            let s = m.score(&[0.5 * step as f64 + 3.0, 0.0, 0.0]);
            assert!(s >= last - 1e-12);
            last = s;
        }
    }

    #[test]
    fn lof_handles_duplicates_and_rejects_small_sets() {
        let mut rows = vec![vec![1.0, 1.0]; 30];
        rows.extend(blob(10, 2, 5));
        let m = lof_fit(&rows, 20, 0.1).unwrap();
        assert!(m.train_scores.iter().all(|s| s.is_finite()));
        assert!(lof_fit(&blob(20, 2, 0), 20, 0.1).is_err());
        assert!(lof_fit(&blob(30, 2, 0), 20, 0.7).is_err());
    }

    #[test]
    fn lof_labels_ignore_training_row_order() {
        let train = blob(80, 3, 6);
        let mut shuffled = train.clone();
        shuffled.reverse();
        let queries = blob(30, 3, 7);
        let a = lof_fit(&train, 20, 0.1).unwrap();
        let b = lof_fit(&shuffled, 20, 0.1).unwrap();
        for q in &queries {
            assert_eq!(a.decide(q).attack, b.decide(q).attack);
        }
    }

    #[test]
    fn ocsvm_nu_property() {
        let x = blob(500, 2, 8);
        for nu in DEFAULT_GRID {
            let m = ocsvm_fit(&x, nu, None).unwrap();
            let out = x.iter().filter(|r| m.decide(r).attack).count() as f64 / 500.0;
            let sv = m.coef.len() as f64 / 500.0;
            assert!(out <= nu + 0.02, "nu {nu}: outliers {out}");
            assert!(sv >= nu - 0.02, "nu {nu}: support {sv}");
            assert!((m.coef_sum() - 1.0).abs() <= 1e-8);
            let c = 1.0 / (nu * 500.0);
            assert!(m.coef.iter().all(|&a| a > 0.0 && a <= c + 1e-8));
            assert!(m.duality_gap.abs() < 1e-4, "gap {}", m.duality_gap);
        }
    }

    #[test]
    fn ocsvm_identical_points_and_far_points() {
        let same = vec![vec![0.3, -1.0]; 10];
        let m = ocsvm_fit(&same, 0.1, None).unwrap();
        assert!(!m.decide(&[0.3, -1.0]).attack);
        let x = blob(100, 2, 9);
        let m = ocsvm_fit(&x, 0.1, None).unwrap();
        assert!(m.decide(&[1e3, 1e3]).attack);
        assert_eq!(rbf(&[1.0, 2.0], &[1.0, 2.0], 0.7), 1.0);
        // Free support vectors sit on the boundary.
        let c = 1.0 / (0.1 * 100.0);
        let free = m.coef.iter().position(|&a| a < c - 1e-9).unwrap();
        let sv = m.support[free].clone();
        let raw: Vec<f64> = sv.iter().zip(m.scaler.mean.iter().zip(&m.scaler.std)).map(|(z, (mu, s))| z * s + mu).collect();
        assert!(m.score(&raw).abs() < 1e-5);
        assert_eq!(ocsvm_fit(&x, 0.1, None).unwrap(), m);
    }

    #[test]
    fn sweep_picks_best_and_breaks_ties_low() {
        let train = blob(120, 3, 10);
        let mut test = blob(40, 3, 11);
        test.extend(blob(10, 3, 12).into_iter().map(|r| r.iter().map(|v| v + 6.0).collect::<Vec<_>>()));
        let mask: Vec<bool> = (0..50).map(|i| i >= 40).collect();
        let s = sweep_best_f2(DetectorKind::Lof, &train, &test, &mask, &DEFAULT_GRID, 20).unwrap();
        assert_eq!(s.entries.len(), 6);
        let best = s.best_entry().f2;
        assert!(s.entries.iter().all(|e| e.f2 <= best));
        assert_eq!(s.entries.iter().position(|e| e.f2 == best), Some(s.best));
        let one = sweep_best_f2(DetectorKind::Ocsvm, &train, &test, &mask, &[0.05], 20).unwrap();
        assert_eq!(one.best_entry().param, 0.05);
        assert!(sweep_best_f2(DetectorKind::Lof, &train, &test, &mask, &[], 20).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let d = Detector::fit(DetectorKind::Lof, &blob(40, 2, 13), 0.1, 5).unwrap();
        assert_eq!(Detector::from_json(&d.to_json(), Path::new("mem")).unwrap(), d);
        let csv = detection_csv(&d.decide_all(&blob(3, 2, 14)), &[true, false, true]);
        assert_eq!(csv.lines().count(), 4);
    }
}
