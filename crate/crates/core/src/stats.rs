//! Summary statistics and the Mann-Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u_x: f64,
    /// U statistic of the second sample; `u_x + u_y = n m`.
    pub u_y: f64,
    pub z: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Average ranks (1-based) of the pooled values, plus `sum(t^3 - t)` over tie groups.
fn pooled_ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (ranks, ties)
}

/// Rank-sum test with tie-corrected variance and a continuity-corrected normal approximation.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let (n, m) = (x.len() as f64, y.len() as f64);
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = pooled_ranks(&pooled);
    let rank_sum_x: f64 = ranks[..x.len()].iter().sum();
    let u_x = rank_sum_x - n * (n + 1.0) / 2.0;
    let u_y = n * m - u_x;

    let total = n + m;
    let variance = n * m / 12.0 * ((total + 1.0) - ties / (total * (total - 1.0)));
    let centre = n * m / 2.0;
    if variance <= 0.0 {
        return Ok(MannWhitney { u_x, u_y, z: 0.0, p: 1.0 });
    }
    let z = ((u_x - centre).abs() - 0.5).max(0.0) / variance.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * normal.sf(z)).min(1.0);
    Ok(MannWhitney { u_x, u_y, z, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn separated_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(r.u_x, 0.0);
        assert_eq!(r.u_y, 9.0);
        // (|0 - 4.5| - 0.5) / sqrt(9 * 7 / 12)
        assert_abs_diff_eq!(r.z, 4.0 / 5.25f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.p, 0.080856, epsilon = 1e-6);
    }

    #[test]
    fn identical_samples() {
        let x = [0.3, 0.5, 0.5, 0.9];
        let r = mann_whitney_u(&x, &x).unwrap();
        assert_eq!(r.u_x, 8.0);
        assert_eq!(r.p, 1.0);
        let flat = mann_whitney_u(&[1.0; 4], &[1.0; 5]).unwrap();
        assert_eq!(flat.p, 1.0);
    }

    #[test]
    fn textbook_example_with_ties() {
        // Values checked against scipy.stats.mannwhitneyu(method="asymptotic",
        // use_continuity=True, alternative="two-sided").
        let x = [19.0, 22.0, 16.0, 29.0, 24.0];
        let y = [20.0, 11.0, 17.0, 12.0];
        let r = mann_whitney_u(&x, &y).unwrap();
        assert_eq!(r.u_x, 17.0);
        assert_abs_diff_eq!(r.p, 0.111347, epsilon = 1e-6);

        let a = [1.1, 2.2, 2.2, 3.3, 4.4, 4.4, 4.4, 5.5];
        let b = [2.2, 3.3, 5.5, 6.6, 6.6, 7.7];
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.u_x, 11.0);
        assert_abs_diff_eq!(r.p, 0.102341, epsilon = 1e-6);
    }

    #[test]
    fn empty_sample_is_rejected() {
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
        assert!(mann_whitney_u(&[1.0], &[]).is_err());
    }

    #[test]
    fn summary_helpers() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(std_dev(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(std_dev(&[4.0]), 0.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    proptest! {
        #[test]
        fn symmetric_in_arguments(
            x in prop::collection::vec(0u8..20, 1..30),
            y in prop::collection::vec(0u8..20, 1..30),
        ) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let y: Vec<f64> = y.into_iter().map(f64::from).collect();
            let a = mann_whitney_u(&x, &y).unwrap();
            let b = mann_whitney_u(&y, &x).unwrap();
            prop_assert!((a.p - b.p).abs() < 1e-12);
            prop_assert_eq!(a.u_x, b.u_y);
            prop_assert_eq!(a.u_x + a.u_y, (x.len() * y.len()) as f64);
            prop_assert!((0.0..=1.0).contains(&a.p));
        }
    }
}
