use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng_for;

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// Centered moving average. Position `i` averages `i - w/2 ..= i + (w-1)/2`,
/// clipped to the series, so edges use fewer points.
pub fn smooth(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 1 {
        return Err(Error::InvalidArgument(
            "smoothing window must be at least 1".into(),
        ));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot smooth an empty series".into(),
        ));
    }
    let n = values.len();
    let before = window / 2;
    let after = (window - 1) / 2;
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(n - 1);
            let slice = &values[lo..=hi];
            // anchored at the first value so constant windows are reproduced exactly
            let anchor = slice[0];
            anchor + slice.iter().map(|v| v - anchor).sum::<f64>() / slice.len() as f64
        })
        .collect())
}

/// Average (fractional) ranks, 1-based; ties share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho with average ranks for ties. `None` when either side is
/// constant, where the coefficient is undefined.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "spearman needs equal lengths, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "spearman needs at least 2 points".into(),
        ));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "spearman inputs must be finite".into(),
        ));
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

/// Linear-interpolated percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Summary of bootstrap correlation draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStat {
    pub mean: f64,
    /// Population standard deviation of the draws.
    pub std: f64,
    pub median: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Draws with a defined correlation.
    pub n_boot: usize,
}

impl CorrelationStat {
    /// `None` if no draw is defined.
    pub fn from_draws(draws: &[f64]) -> Option<Self> {
        if draws.is_empty() {
            return None;
        }
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(CorrelationStat {
            mean,
            std: var.sqrt(),
            median: percentile_sorted(&sorted, 0.5),
            ci_lo: percentile_sorted(&sorted, 0.025),
            ci_hi: percentile_sorted(&sorted, 0.975),
            n_boot: draws.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            n_boot: DEFAULT_BOOTSTRAP,
            seed: 0,
        }
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Bootstrap of `spearman(fixed, means)` where `means[g]` is the mean of a
/// with-replacement resample of `groups[g]`. Draw `b` uses its own RNG stream,
/// resampling groups in order, so draws are independent of scheduling.
pub fn bootstrap_correlation(
    fixed: &[f64],
    groups: &[Vec<f64>],
    opts: &BootstrapOptions,
) -> Result<Vec<Option<f64>>> {
    if fixed.len() != groups.len() {
        return Err(Error::InvalidArgument(
            "bootstrap groups do not match fixed values".into(),
        ));
    }
    if let Some(g) = groups.iter().position(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!(
            "bootstrap group {g} has no runs"
        )));
    }
    spearman(fixed, &groups.iter().map(|g| mean(g)).collect::<Vec<_>>())?;
    Ok((0..opts.n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(opts.seed, &[b as u64]);
            let means: Vec<f64> = groups
                .iter()
                .map(|g| {
                    let resample: Vec<f64> = (0..g.len())
                        .map(|_| g[rng.random_range(0..g.len())])
                        .collect();
                    mean(&resample)
                })
                .collect();
            spearman(fixed, &means).expect("lengths checked above")
        })
        .collect())
}

pub fn summarize_draws(draws: &[Option<f64>]) -> Option<CorrelationStat> {
    let defined: Vec<f64> = draws.iter().flatten().copied().collect();
    CorrelationStat::from_draws(&defined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn naive_smooth(values: &[f64], window: usize) -> Vec<f64> {
        let n = values.len() as isize;
        let before = (window / 2) as isize;
        let after = ((window - 1) / 2) as isize;
        (0..n)
            .map(|i| {
                let mut sum = 0.0;
                let mut count = 0.0;
                for j in (i - before)..=(i + after) {
                    if j >= 0 && j < n {
                        sum += values[j as usize];
                        count += 1.0;
                    }
                }
                sum / count
            })
            .collect()
    }

    #[test]
    fn smooth_window_two() {
        let out = smooth(&[0.0, 1.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(out, vec![0.0, 0.5, 0.5, 0.5]);
        assert_eq!(out, naive_smooth(&[0.0, 1.0, 0.0, 1.0], 2));
    }

    #[test]
    fn smooth_edge_cases() {
        assert!(smooth(&[1.0], 0).is_err());
        assert!(smooth(&[], 3).is_err());
        assert_eq!(smooth(&[0.3; 7], 10).unwrap(), vec![0.3; 7]);
        assert_eq!(smooth(&[1.0, 2.0, 3.0], 1).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(DEFAULT_WINDOW, 10);
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &x).unwrap(), Some(1.0));
        assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), Some(-1.0));
        assert_eq!(spearman(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap(), Some(0.6));
        assert_eq!(spearman(&x, &[5.0; 4]).unwrap(), None);
        assert!(spearman(&x, &[1.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 10.0, 30.0]),
            vec![1.5, 3.0, 1.5, 4.0]
        );
        // rho of tied data against a ranking, checked by hand:
        // ranks x = [1.5,1.5,3,4], y = [1,2,3,4]; d = [.5,-.5,0,0]
        let r = spearman(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .unwrap();
        let rx = [1.5, 1.5, 3.0, 4.0];
        let ry = [1.0, 2.0, 3.0, 4.0];
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - 2.5) * (b - 2.5)).sum();
        let vx: f64 = rx.iter().map(|a| (a - 2.5f64).powi(2)).sum();
        let vy: f64 = ry.iter().map(|a| (a - 2.5f64).powi(2)).sum();
        assert!((r - cov / (vx * vy).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn percentiles_interpolate() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&s, 0.5), 2.0);
        assert_eq!(percentile_sorted(&s, 0.025), 0.1);
        assert_eq!(percentile_sorted(&[7.0], 0.975), 7.0);
    }

    #[test]
    fn stat_orders_quantiles() {
        let s = CorrelationStat::from_draws(&[0.2, -0.1, 0.9, 0.5]).unwrap();
        assert!(s.ci_lo <= s.median && s.median <= s.ci_hi);
        assert!(CorrelationStat::from_draws(&[]).is_none());
    }

    proptest! {
        #[test]
        fn smooth_matches_naive(values in prop::collection::vec(-5.0f64..5.0, 1..60), window in 1usize..15) {
            let a = smooth(&values, window).unwrap();
            let b = naive_smooth(&values, window);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn spearman_symmetry_and_monotone_invariance(
            xs in prop::collection::hash_set(-1000i32..1000, 3..30),
            seed in any::<u64>(),
        ) {
            let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
            let mut rng = rng_for(seed, &[]);
            let ys: Vec<f64> = xs.iter().map(|_| rng.random::<f64>()).collect();
            let r = spearman(&xs, &ys).unwrap().unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert_eq!(spearman(&ys, &xs).unwrap().unwrap(), r);
            let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
            prop_assert!((spearman(&xs, &neg).unwrap().unwrap() + r).abs() < 1e-12);
            let cubed: Vec<f64> = xs.iter().map(|x| x * x * x + 3.0).collect();
            let expy: Vec<f64> = ys.iter().map(|y| y.exp()).collect();
            prop_assert!((spearman(&cubed, &expy).unwrap().unwrap() - r).abs() < 1e-12);
        }
    }
}
