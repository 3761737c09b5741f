//! Nonparametric statistics for run comparison: Mann–Whitney U with exact
//! enumeration for small samples, Bonferroni adjustment, percentile
//! bootstrap confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;

/// Two-sided Mann–Whitney U test. Returns `(U, p)` where U counts pairs
/// won by `a` (ties at half weight). Samples with both sizes <= 8 use exact
/// enumeration over all group assignments; larger samples use the
/// tie-corrected normal approximation with continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<(f64, f64), HarnessError> {
    if a.is_empty() || b.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    let u = u_statistic(a, b);
    let p = if a.len() <= 8 && b.len() <= 8 {
        exact_p(a, b, u)
    } else {
        normal_p(a, b, u)
    };
    Ok((u, p.min(1.0)))
}

/// U statistic for group `a` via pairwise comparison (equivalent to the
/// rank-sum formulation with midranks).
fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for &x in a {
        for &y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Exact permutation p-value: enumerate every way to choose which pooled
/// values belong to group a, and double the smaller tail.
fn exact_p(a: &[f64], b: &[f64], u_obs: f64) -> f64 {
    let mut pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let n = pooled.len();
    let n1 = a.len();

    let mut le = 0u64; // splits with U <= U_obs
    let mut ge = 0u64;
    let mut total = 0u64;
    let mut chosen = Vec::with_capacity(n1);
    enumerate_splits(&pooled, n, n1, 0, &mut chosen, &mut |ga, gb| {
        let u = u_statistic(ga, gb);
        total += 1;
        if u <= u_obs + 1e-12 {
            le += 1;
        }
        if u >= u_obs - 1e-12 {
            ge += 1;
        }
    });
    let p_le = le as f64 / total as f64;
    let p_ge = ge as f64 / total as f64;
    2.0 * p_le.min(p_ge)
}

fn enumerate_splits(
    pooled: &[f64],
    n: usize,
    n1: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    visit: &mut impl FnMut(&[f64], &[f64]),
) {
    if chosen.len() == n1 {
        let ga: Vec<f64> = chosen.iter().map(|&i| pooled[i]).collect();
        let gb: Vec<f64> = (0..n).filter(|i| !chosen.contains(i)).map(|i| pooled[i]).collect();
        visit(&ga, &gb);
        return;
    }
    let remaining = n1 - chosen.len();
    for i in start..=(n - remaining) {
        chosen.push(i);
        enumerate_splits(pooled, n, n1, i + 1, chosen, visit);
        chosen.pop();
    }
}

/// Normal approximation with tie correction and continuity correction.
fn normal_p(a: &[f64], b: &[f64], u: f64) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let n = n1 + n2;
    let mean = n1 * n2 / 2.0;

    // tie correction: sum of (t^3 - t) over tied groups in the pooled sample
    let mut pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j] == pooled[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0; // all values tied
    }
    let diff = u - mean;
    let cc = 0.5 * diff.signum();
    let z = (diff - cc) / var.sqrt();
    2.0 * normal_sf(z.abs())
}

/// Upper tail of the standard normal via the Abramowitz–Stegun 7.1.26
/// erf polynomial (|error| < 1.5e-7).
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    let sign_negative = x < 0.0;
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let e = poly * (-x * x).exp();
    if sign_negative {
        2.0 - e
    } else {
        e
    }
}

/// Bonferroni adjustment: `min(1, p * k)` with `k = pvals.len()`.
pub fn bonferroni(pvals: &[f64]) -> Vec<f64> {
    let k = pvals.len() as f64;
    pvals.iter().map(|p| (p * k).min(1.0)).collect()
}

/// Percentile bootstrap confidence interval of the mean. Deterministic
/// given the seed.
pub fn bootstrap_ci(samples: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64), HarnessError> {
    if samples.len() < 2 {
        return Err(HarnessError::TooFewSamples { needed: 2, got: samples.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut acc = 0.0;
            for _ in 0..n {
                acc += samples[rng.random_range(0..n)];
            }
            acc / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let lo_idx = (alpha * (resamples - 1) as f64).round() as usize;
    let hi_idx = ((1.0 - alpha) * (resamples - 1) as f64).round() as usize;
    Ok((means[lo_idx], means[hi_idx]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mwu_separated_groups_exact() {
        // every arrangement oracle: C(6,3) = 20 splits, one has U <= 0
        let (u, p) = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(u, 0.0);
        assert!((p - 0.1).abs() < 1e-12, "expected exact p = 0.1, got {p}");
    }

    #[test]
    fn mwu_identical_samples() {
        let a = [5.0, 6.0, 7.0];
        let (u, p) = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(u, 4.5); // n^2 / 2 with ties at half weight
        assert_eq!(p, 1.0);
    }

    #[test]
    fn mwu_swap_symmetry() {
        let a = [1.0, 5.0, 3.0, 9.0];
        let b = [2.0, 8.0, 4.0];
        let (u_ab, p_ab) = mann_whitney_u(&a, &b).unwrap();
        let (u_ba, p_ba) = mann_whitney_u(&b, &a).unwrap();
        assert_eq!(u_ab + u_ba, (a.len() * b.len()) as f64);
        assert!((p_ab - p_ba).abs() < 1e-12);
    }

    #[test]
    fn mwu_rejects_empty() {
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }

    #[test]
    fn mwu_exact_and_normal_agree_on_significance_small_n() {
        // seeded fuzz over small samples; the two paths must agree at alpha = 0.05
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..300 {
            let n1 = rng.random_range(3..=8);
            let n2 = rng.random_range(3..=8);
            let shift = rng.random_range(-2.0..2.0);
            let a: Vec<f64> = (0..n1).map(|_| rng.random::<f64>() * 3.0).collect();
            let b: Vec<f64> = (0..n2).map(|_| rng.random::<f64>() * 3.0 + shift).collect();
            let u = u_statistic(&a, &b);
            let p_exact = exact_p(&a, &b, u);
            let p_norm = normal_p(&a, &b, u);
            // skip knife-edge cases where any approximation flips
            if (p_exact - 0.05).abs() < 0.02 {
                continue;
            }
            assert_eq!(
                p_exact < 0.05,
                p_norm < 0.05,
                "paths disagree: exact {p_exact}, normal {p_norm} (a={a:?}, b={b:?})"
            );
        }
    }

    #[test]
    fn bonferroni_definition_cases() {
        assert_eq!(bonferroni(&[0.01, 0.04]), vec![0.02, 0.08]);
        assert_eq!(bonferroni(&[0.9]), vec![0.9]);
        assert_eq!(bonferroni(&[0.6, 0.7]), vec![1.0, 1.0]);
    }

    #[test]
    fn bootstrap_point_mass() {
        let (lo, hi) = bootstrap_ci(&[3.3; 10], 0.90, 2000, 7).unwrap();
        assert_eq!((lo, hi), (3.3, 3.3));
    }

    #[test]
    fn bootstrap_contains_sample_mean() {
        let samples: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let mean = 9.5;
        let (lo, hi) = bootstrap_ci(&samples, 0.90, 10_000, 11).unwrap();
        assert!(lo <= mean && mean <= hi, "({lo}, {hi}) should contain {mean}");
        assert!(lo < hi);
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let samples = [0.4, 1.9, -0.3, 2.2, 0.0, 1.1];
        let a = bootstrap_ci(&samples, 0.90, 5000, 99).unwrap();
        let b = bootstrap_ci(&samples, 0.90, 5000, 99).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_ci(&samples, 0.90, 5000, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bootstrap_needs_two_samples() {
        assert!(bootstrap_ci(&[1.0], 0.9, 100, 0).is_err());
    }

    #[test]
    fn normal_sf_reference_values() {
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-7);
        assert!((normal_sf(1.959964) - 0.025).abs() < 1e-5);
        assert!((normal_sf(-1.0) - 0.8413447).abs() < 1e-5);
    }
}
