//! Chaos-theoretic series measures: sample entropy, detrended fluctuation
//! analysis, rescaled-range Hurst exponent and Rosenstein's largest
//! Lyapunov exponent.
//!
//! Degenerate inputs (zero variance, no usable neighbour pairs) return 0
//! and log a warning instead of failing, so one flat window never aborts a
//! whole feature matrix.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::stats::{mean, std_pop};
use crate::error::{Error, Result};

pub const CHAOS_NAMES: [&str; 4] = ["chaos_sample_entropy", "chaos_dfa", "chaos_hurst", "chaos_lyapunov"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChaosConfig {
    pub entropy_m: usize,
    /// Tolerance as a multiple of the series standard deviation.
    pub entropy_r: f64,
    /// Number of geometric box sizes for DFA and Hurst.
    pub ladder_points: usize,
    pub min_box: usize,
    pub embedding_dim: usize,
    pub lag: usize,
    /// Minimum temporal separation of nearest neighbours.
    pub theiler: usize,
    /// Divergence steps fitted by the Lyapunov estimate.
    pub trajectory_len: usize,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        ChaosConfig {
            entropy_m: 2,
            entropy_r: 0.2,
            ladder_points: 8,
            min_box: 4,
            embedding_dim: 4,
            lag: 1,
            theiler: 10,
            trajectory_len: 6,
        }
    }
}

fn chebyshev_within(s: &[f64], i: usize, j: usize, len: usize, r: f64) -> bool {
    (0..len).all(|k| (s[i + k] - s[j + k]).abs() <= r)
}

/// `-ln(A / B)` where `B` counts pairs of length-`m` templates within
/// Chebyshev distance `r` and `A` the pairs that still match at length
/// `m + 1`. Both counts use the same `n - m` templates and exclude self
/// matches. `B = 0` gives 0; `A = 0` gives `ln(B + 1)`.
pub fn sample_entropy(s: &[f64], m: usize, r: f64) -> Result<f64> {
    let n = s.len();
    if n < m + 2 {
        return Err(Error::Precondition(format!("sample entropy needs >= {} points, got {n}", m + 2)));
    }
    let templates = n - m;
    let (mut a, mut b) = (0u64, 0u64);
    for i in 0..templates {
        for j in i + 1..templates {
            if chebyshev_within(s, i, j, m, r) {
                b += 1;
                if (s[i + m] - s[j + m]).abs() <= r {
                    a += 1;
                }
            }
        }
    }
    Ok(if b == 0 {
        0.0
    } else if a == 0 {
        ((b + 1) as f64).ln()
    } else {
        -(a as f64 / b as f64).ln()
    })
}

/// Up to `points` distinct integer box sizes spaced geometrically from
/// `min_box` to `n / 4`.
pub fn box_ladder(n: usize, min_box: usize, points: usize) -> Vec<usize> {
    let hi = n / 4;
    if hi < min_box || points == 0 {
        return Vec::new();
    }
    if points == 1 || hi == min_box {
        return vec![min_box];
    }
    let ratio = (hi as f64 / min_box as f64).ln() / (points - 1) as f64;
    let mut out: Vec<usize> = (0..points).map(|k| (min_box as f64 * (ratio * k as f64).exp()).round() as usize).collect();
    out.dedup();
    out
}

/// Least-squares slope of `y` against `x`.
pub(crate) fn slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Mean squared residual of a straight-line fit to `y` over `0..len`.
fn detrended_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let ym = mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (t, v) in y.iter().enumerate() {
        let dt = t as f64 - tm;
        sxx += dt * dt;
        sxy += dt * (v - ym);
    }
    let b = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    y.iter()
        .enumerate()
        .map(|(t, v)| {
            let e = v - (ym + b * (t as f64 - tm));
            e * e
        })
        .sum::<f64>()
        / n
}

fn is_flat(s: &[f64]) -> bool {
    std_pop(s) < 1e-12
}

/// DFA scaling exponent: slope of `log F(n)` against `log n` where `F(n)`
/// is the RMS of the linearly detrended profile over non-overlapping boxes.
pub fn dfa_exponent(s: &[f64], cfg: &ChaosConfig) -> Result<f64> {
    if s.len() < 20 {
        return Err(Error::Precondition(format!("DFA needs >= 20 points, got {}", s.len())));
    }
    if is_flat(s) {
        log::warn!("DFA on a zero-variance series; returning 0");
        return Ok(0.0);
    }
    let m = mean(s);
    let profile: Vec<f64> = s
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v - m;
            Some(*acc)
        })
        .collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for n in box_ladder(s.len(), cfg.min_box, cfg.ladder_points) {
        let boxes = profile.len() / n;
        let f2 = (0..boxes).map(|b| detrended_variance(&profile[b * n..(b + 1) * n])).sum::<f64>() / boxes as f64;
        if f2 > 0.0 {
            xs.push((n as f64).ln());
            ys.push(0.5 * f2.ln());
        }
    }
    if xs.len() < 2 {
        log::warn!("DFA has fewer than two usable box sizes; returning 0");
        return Ok(0.0);
    }
    Ok(slope(&xs, &ys))
}

/// Anis-Lloyd-Peters expected rescaled range of white noise at box size n.
fn expected_rs(n: usize) -> f64 {
    let nf = n as f64;
    let front = (nf - 0.5) / nf;
    let gamma_ratio = if n <= 340 {
        (ln_gamma((nf - 1.0) / 2.0) - ln_gamma(nf / 2.0)).exp() / std::f64::consts::PI.sqrt()
    } else {
        1.0 / (nf * std::f64::consts::FRAC_PI_2).sqrt()
    };
    let sum: f64 = (1..n).map(|i| ((nf - i as f64) / i as f64).sqrt()).sum();
    front * gamma_ratio * sum
}

/// Hurst exponent by rescaled range with the Anis-Lloyd-Peters small-box
/// correction: `0.5 + slope(log(R/S) - log E[R/S], log n)`.
pub fn hurst_exponent(s: &[f64], cfg: &ChaosConfig) -> Result<f64> {
    if s.len() < 20 {
        return Err(Error::Precondition(format!("Hurst exponent needs >= 20 points, got {}", s.len())));
    }
    if is_flat(s) {
        log::warn!("Hurst exponent on a zero-variance series; returning 0");
        return Ok(0.0);
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for n in box_ladder(s.len(), cfg.min_box, cfg.ladder_points) {
        let boxes = s.len() / n;
        let mut acc = 0.0;
        let mut used = 0;
        for b in 0..boxes {
            let seg = &s[b * n..(b + 1) * n];
            let sd = std_pop(seg);
            if sd < 1e-12 {
                continue;
            }
            let m = mean(seg);
            let mut cum = 0.0;
            let (mut lo, mut hi) = (0.0f64, 0.0f64);
            for v in seg {
                cum += v - m;
                lo = lo.min(cum);
                hi = hi.max(cum);
            }
            acc += (hi - lo) / sd;
            used += 1;
        }
        if used > 0 && acc > 0.0 {
            let rs = acc / used as f64;
            xs.push((n as f64).ln());
            ys.push(rs.ln() - expected_rs(n).ln());
        }
    }
    if xs.len() < 2 {
        log::warn!("Hurst exponent has fewer than two usable box sizes; returning 0");
        return Ok(0.0);
    }
    Ok(0.5 + slope(&xs, &ys))
}

/// Rosenstein's estimate: embed with the configured dimension and lag,
/// pair every point with its nearest neighbour at least `theiler` steps
/// away, and fit a line to the mean log separation over the next
/// `trajectory_len` steps.
pub fn lyapunov_largest(s: &[f64], cfg: &ChaosConfig) -> Result<f64> {
    if s.len() < 50 {
        return Err(Error::Precondition(format!("Lyapunov estimate needs >= 50 points, got {}", s.len())));
    }
    if is_flat(s) {
        log::warn!("Lyapunov estimate on a zero-variance series; returning 0");
        return Ok(0.0);
    }
    let span = (cfg.embedding_dim - 1) * cfg.lag;
    if s.len() <= span + cfg.trajectory_len {
        log::warn!("series too short for the embedding; returning 0");
        return Ok(0.0);
    }
    let vectors = s.len() - span;
    let usable = vectors - cfg.trajectory_len + 1;
    let dist = |i: usize, j: usize| -> f64 {
        (0..cfg.embedding_dim)
            .map(|k| {
                let d = s[i + k * cfg.lag] - s[j + k * cfg.lag];
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut div = vec![0.0; cfg.trajectory_len];
    let mut count = vec![0usize; cfg.trajectory_len];
    for i in 0..usable {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..usable {
            if i.abs_diff(j) <= cfg.theiler {
                continue;
            }
            let d = dist(i, j);
            if d > 0.0 && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        let Some((_, j)) = best else { continue };
        for k in 0..cfg.trajectory_len {
            let d = dist(i + k, j + k);
            if d > 0.0 {
                div[k] += d.ln();
                count[k] += 1;
            }
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..cfg.trajectory_len)
        .filter(|&k| count[k] > 0)
        .map(|k| (k as f64, div[k] / count[k] as f64))
        .unzip();
    if xs.len() < 2 {
        log::warn!("Lyapunov estimate found no usable neighbour pairs; returning 0");
        return Ok(0.0);
    }
    Ok(slope(&xs, &ys))
}

/// All four measures in feature order.
pub fn chaos_features(s: &[f64], cfg: &ChaosConfig) -> Result<[f64; 4]> {
    let r = cfg.entropy_r * std_pop(s);
    Ok([
        sample_entropy(s, cfg.entropy_m, r)?,
        dfa_exponent(s, cfg)?,
        hurst_exponent(s, cfg)?,
        lyapunov_largest(s, cfg)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn sampen(s: &[f64]) -> f64 {
        sample_entropy(s, 2, 0.2 * std_pop(s)).unwrap()
    }

    #[test]
    fn constant_series_guards() {
        let c = vec![2.5; 100];
        let cfg = ChaosConfig::default();
        assert_eq!(sampen(&c), 0.0);
        assert_eq!(dfa_exponent(&c, &cfg).unwrap(), 0.0);
        assert_eq!(hurst_exponent(&c, &cfg).unwrap(), 0.0);
        assert_eq!(lyapunov_largest(&c, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn sample_entropy_precondition_and_brute_force() {
        assert!(sample_entropy(&[1.0, 2.0, 3.0], 2, 0.1).is_err());
        // Templates of length 2 from [1,2,1,2,1]: (1,2),(2,1),(1,2) -> B = 1
        // pair; extended (1,2,1),(1,2,1) match -> A = 1, entropy 0.
        assert_eq!(sample_entropy(&[1.0, 2.0, 1.0, 2.0, 1.0], 2, 0.1).unwrap(), 0.0);
        // No extended matches: A = 0, B = 1 -> ln 2.
        let v = sample_entropy(&[1.0, 2.0, 5.0, 1.0, 2.0, 9.0], 2, 0.1).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn noise_is_more_complex_than_a_sine() {
        let n = 300;
        let mut noisier = 0;
        for seed in 0..50u64 {
            let wn = noise(n, seed);
            let sd = std_pop(&wn);
            let phase = seed as f64 * 0.1;
            let sine: Vec<f64> = (0..n).map(|t| sd * 2f64.sqrt() * (0.2 * t as f64 + phase).sin()).collect();
            if sampen(&wn) > sampen(&sine) {
                noisier += 1;
            }
        }
        assert_eq!(noisier, 50);
    }

    #[test]
    fn dfa_and_hurst_on_white_noise() {
        let cfg = ChaosConfig::default();
        let (mut dfa, mut hurst) = (0.0, 0.0);
        for seed in 0..50 {
            let s = noise(500, seed);
            dfa += dfa_exponent(&s, &cfg).unwrap() / 50.0;
            hurst += hurst_exponent(&s, &cfg).unwrap() / 50.0;
        }
        assert!((0.4..=0.6).contains(&dfa), "DFA {dfa}");
        assert!((0.4..=0.6).contains(&hurst), "Hurst {hurst}");
    }

    #[test]
    fn dfa_on_random_walk() {
        let cfg = ChaosConfig::default();
        let mut acc = 0.0;
        for seed in 0..50 {
            let walk: Vec<f64> = noise(500, seed)
                .iter()
                .scan(0.0, |a, v| {
                    *a += v;
                    Some(*a)
                })
                .collect();
            acc += dfa_exponent(&walk, &cfg).unwrap() / 50.0;
        }
        assert!((acc - 1.5).abs() <= 0.15, "DFA {acc}");
    }

    #[test]
    fn hurst_on_trend() {
        let cfg = ChaosConfig::default();
        let mut acc = 0.0;
        for seed in 0..50 {
            let s: Vec<f64> = noise(500, seed).iter().enumerate().map(|(t, v)| 0.05 * t as f64 + 0.5 * v).collect();
            acc += hurst_exponent(&s, &cfg).unwrap() / 50.0;
        }
        assert!(acc > 0.7, "Hurst {acc}");
    }

    #[test]
    fn lyapunov_of_logistic_map() {
        let mut x = 0.1234;
        for _ in 0..100 {
            x = 4.0 * x * (1.0 - x);
        }
        let orbit: Vec<f64> = (0..1000)
            .map(|_| {
                x = 4.0 * x * (1.0 - x);
                x
            })
            .collect();
        let l = lyapunov_largest(&orbit, &ChaosConfig::default()).unwrap();
        assert!((l - 2f64.ln()).abs() <= 0.15, "lambda {l}");
    }

    #[test]
    fn lyapunov_of_sine_is_small() {
        let cfg = ChaosConfig::default();
        for k in 0..10 {
            let phase = k as f64 * 0.6;
            let s: Vec<f64> = (0..500).map(|t| (0.13 * t as f64 + phase).sin()).collect();
            let l = lyapunov_largest(&s, &cfg).unwrap();
            assert!(l <= 0.05, "phase {phase}: {l}");
        }
    }

    #[test]
    fn ladder_is_geometric_and_bounded() {
        let l = box_ladder(500, 4, 8);
        assert_eq!(l.first(), Some(&4));
        assert_eq!(l.last(), Some(&125));
        assert!(l.windows(2).all(|p| p[0] < p[1]));
        assert_eq!(box_ladder(80, 4, 8).last(), Some(&20));
        assert!(box_ladder(10, 4, 8).is_empty());
    }
}
