//! Statistical tests and summaries used by the verification harness.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Result};
use crate::rng;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let n = xs.len();
        let mean = mean(xs);
        let std_error = if n > 1 { (variance(xs) / n as f64).sqrt() } else { 0.0 };
        Estimate { mean, std_error, n }
    }

    /// `|mean - target| <= k * SE`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile (type 7).
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// `true` when each element is `<=` its predecessor (within `tol`).
pub fn is_nonincreasing(xs: &[f64], tol: f64) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] + tol)
}

/// Per-test level under a Bonferroni correction.
pub fn bonferroni(alpha: f64, tests: usize) -> f64 {
    alpha / tests.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, effective_n: f64) -> f64 {
    let sn = effective_n.sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<TestOutcome> {
    if samples.len() < 8 {
        return Err(invalid(format!("KS test needs at least 8 samples, got {}", samples.len())));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(invalid("KS samples contain NaN"));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    Ok(TestOutcome {
        statistic: d,
        p_value: ks_p_value(d, n),
    })
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    if a.len() < 8 || b.len() < 8 {
        return Err(invalid("two-sample KS test needs at least 8 samples per group"));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(TestOutcome {
        statistic: d,
        p_value: ks_p_value(d, na * nb / (na + nb)),
    })
}

fn chi_square_sf(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).map(|c| c.sf(stat)).unwrap_or(f64::NAN)
}

/// Pearson chi-square test of uniformity across the categories.
pub fn chi_square_uniform(counts: &[u64]) -> Result<TestOutcome> {
    let k = counts.len();
    if k == 0 {
        return Err(invalid("chi-square test needs at least one category"));
    }
    let total: u64 = counts.iter().sum();
    if total < 5 * k as u64 {
        return Err(invalid(format!(
            "chi-square test needs at least 5 observations per category ({total} over {k})"
        )));
    }
    let probs = vec![1.0 / k as f64; k];
    chi_square_gof(counts, &probs, 0)
}

/// Pearson goodness-of-fit against the given category probabilities.
/// `fitted` parameters are subtracted from the degrees of freedom.
pub fn chi_square_gof(counts: &[u64], probs: &[f64], fitted: usize) -> Result<TestOutcome> {
    if counts.len() != probs.len() || counts.is_empty() {
        return Err(invalid("counts and probabilities must have equal nonzero length"));
    }
    let psum: f64 = probs.iter().sum();
    if (psum - 1.0).abs() > 1e-9 || probs.iter().any(|&p| !(p > 0.0)) {
        return Err(invalid(format!("category probabilities must be positive and sum to 1 (sum {psum})")));
    }
    let total: u64 = counts.iter().sum();
    let n = total as f64;
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = n * p;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let df = counts.len().saturating_sub(1 + fitted);
    Ok(TestOutcome {
        statistic: stat,
        p_value: chi_square_sf(stat, df),
    })
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

fn kruskal_wallis_from_ranks(ranks: &[f64], labels: &[usize], groups: usize) -> f64 {
    let n = ranks.len() as f64;
    let mut sums = vec![0.0; groups];
    let mut sizes = vec![0usize; groups];
    for (&r, &g) in ranks.iter().zip(labels) {
        sums[g] += r;
        sizes[g] += 1;
    }
    let s: f64 = sums
        .iter()
        .zip(&sizes)
        .filter(|(_, &c)| c > 0)
        .map(|(&rs, &c)| rs * rs / c as f64)
        .sum();
    12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0)
}

/// Kruskal–Wallis `H` statistic of `values` grouped by `labels`.
pub fn kruskal_wallis(values: &[f64], labels: &[usize]) -> Result<f64> {
    if values.len() != labels.len() || values.len() < 2 {
        return Err(invalid("values and labels must have equal length >= 2"));
    }
    let groups = labels.iter().max().map_or(0, |m| m + 1);
    Ok(kruskal_wallis_from_ranks(&ranks(values), labels, groups))
}

/// Permutation test of independence between a real variable and a
/// categorical label, using the Kruskal–Wallis statistic.
pub fn permutation_independence(
    values: &[f64],
    labels: &[usize],
    permutations: usize,
    seed: u64,
) -> Result<TestOutcome> {
    if values.len() != labels.len() || values.len() < 2 {
        return Err(invalid("values and labels must have equal length >= 2"));
    }
    if permutations == 0 {
        return Err(invalid("need at least one permutation"));
    }
    let groups = labels.iter().max().map_or(0, |m| m + 1);
    let r = ranks(values);
    let observed = kruskal_wallis_from_ranks(&r, labels, groups);
    let mut rng = rng::stream(seed, rng::tag::PERMUTATION, 0);
    let mut perm = labels.to_vec();
    let mut exceed = 0usize;
    for _ in 0..permutations {
        perm.shuffle(&mut rng);
        if kruskal_wallis_from_ranks(&r, &perm, groups) >= observed - 1e-12 {
            exceed += 1;
        }
    }
    Ok(TestOutcome {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
    })
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2))
}

/// Total-variation distance between two weight vectors of equal length.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn uniform_samples_pass_ks() {
        let mut rng = rng::stream(1, 0, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let t = ks_test(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(t.p_value > 0.01, "{t:?}");
    }

    #[test]
    fn wrong_exponential_mean_is_rejected() {
        let mut rng = rng::stream(2, 0, 0);
        let e = Exp::new(0.5).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| e.sample(&mut rng)).collect();
        let t = ks_test(&xs, |x| 1.0 - (-x.max(0.0)).exp()).unwrap();
        assert!(t.p_value < 0.001, "{t:?}");
    }

    #[test]
    fn constant_samples_have_large_statistic() {
        let xs = vec![0.3; 20];
        let t = ks_test(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(t.statistic >= 0.5);
        assert!(ks_test(&[], |x| x).is_err());
        assert!(ks_test(&[0.1; 5], |x| x).is_err());
    }

    #[test]
    fn chi_square_examples() {
        let t = chi_square_uniform(&[100, 100, 100, 100]).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        let t = chi_square_uniform(&[400, 0, 0, 0]).unwrap();
        assert!(t.p_value < 1e-10);
        assert!(chi_square_uniform(&[3, 4, 2, 1]).is_err());
    }

    #[test]
    fn chi_square_null_p_values_are_uniform() {
        // 4 cells, n = 2000 multinomial draws, 400 replicas of the whole test
        let mut rng = rng::stream(3, 0, 0);
        let ps: Vec<f64> = (0..400)
            .map(|_| {
                let mut c = [0u64; 4];
                for _ in 0..2000 {
                    c[rng.random_range(0..4)] += 1;
                }
                chi_square_uniform(&c).unwrap().p_value
            })
            .collect();
        let t = ks_test(&ps, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(t.p_value > 0.01, "{t:?}");
    }

    #[test]
    fn ks_null_p_values_are_uniform() {
        let mut rng = rng::stream(4, 0, 0);
        let ps: Vec<f64> = (0..300)
            .map(|_| {
                let xs: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
                ks_test(&xs, |x| x.clamp(0.0, 1.0)).unwrap().p_value
            })
            .collect();
        // the asymptotic p-value is slightly conservative; check uniformity loosely
        let t = ks_test(&ps, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(t.p_value > 0.01, "{t:?}");
    }

    #[test]
    fn two_sample_ks() {
        let mut rng = rng::stream(5, 0, 0);
        let a: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..1500).map(|_| rng.random::<f64>()).collect();
        assert!(ks_two_sample(&a, &b).unwrap().p_value > 0.01);
        let c: Vec<f64> = b.iter().map(|x| x * 0.8).collect();
        assert!(ks_two_sample(&a, &c).unwrap().p_value < 1e-6);
    }

    #[test]
    fn kruskal_wallis_detects_dependence() {
        let mut rng = rng::stream(6, 0, 0);
        let labels: Vec<usize> = (0..600).map(|i| i % 3).collect();
        let indep: Vec<f64> = labels.iter().map(|_| rng.random::<f64>()).collect();
        let dep: Vec<f64> = labels.iter().map(|&l| rng.random::<f64>() + 0.3 * l as f64).collect();
        assert!(permutation_independence(&indep, &labels, 2000, 1).unwrap().p_value > 0.01);
        assert!(permutation_independence(&dep, &labels, 2000, 1).unwrap().p_value < 0.001);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn summaries() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(is_nonincreasing(&[3.0, 3.0, 1.0], 0.0));
        assert!(!is_nonincreasing(&[1.0, 2.0], 0.0));
        assert!((normal_cdf(0.0, 0.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((total_variation(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }
}
