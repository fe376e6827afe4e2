use crate::error::{Error, Result};

pub const STAT_NAMES: [&str; 8] = [
    "stat_min",
    "stat_max",
    "stat_mean",
    "stat_median",
    "stat_std",
    "stat_range",
    "stat_mean_max_ratio",
    "stat_min_max_ratio",
];

pub(crate) fn mean(s: &[f64]) -> f64 {
    s.iter().sum::<f64>() / s.len() as f64
}

/// Population standard deviation.
pub(crate) fn std_pop(s: &[f64]) -> f64 {
    let m = mean(s);
    (s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / s.len() as f64).sqrt()
}

pub(crate) fn median(s: &[f64]) -> f64 {
    let mut v = s.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// (min, max, mean, median, std, range, mean/max, min/max). Both ratios
/// are 0 when the maximum is 0.
pub fn stat_features(s: &[f64]) -> Result<[f64; 8]> {
    if s.len() < 2 {
        return Err(Error::Precondition(format!("statistical features need >= 2 points, got {}", s.len())));
    }
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = mean(s);
    let (mean_ratio, min_ratio) = if max == 0.0 { (0.0, 0.0) } else { (mean / max, min / max) };
    Ok([min, max, mean, median(s), std_pop(s), max - min, mean_ratio, min_ratio])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_evaluation() {
        let f = stat_features(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let std = (1.25f64).sqrt();
        assert_eq!(f, [1.0, 4.0, 2.5, 2.5, std, 3.0, 0.625, 0.25]);
    }

    #[test]
    fn constant_series() {
        assert_eq!(stat_features(&[3.0; 5]).unwrap(), [3.0, 3.0, 3.0, 3.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_maximum_guards_ratios() {
        let f = stat_features(&[-2.0, 0.0, -1.0]).unwrap();
        assert_eq!((f[6], f[7]), (0.0, 0.0));
        assert!(stat_features(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn ordering_invariants(s in proptest::collection::vec(-1e3f64..1e3, 2..60)) {
            let f = stat_features(&s).unwrap();
            prop_assert!(f[0] <= f[3] && f[3] <= f[1]);
            prop_assert_eq!(f[5], f[1] - f[0]);
            prop_assert!(f[4] >= 0.0);
        }
    }
}
