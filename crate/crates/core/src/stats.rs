//! Small statistical toolkit: regression, order statistics, interval
//! estimates and the handful of hypothesis tests the experiments report.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("least squares needs at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::invalid("least squares needs at least two distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    // A perfectly flat series is also a perfect fit.
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(LinearFit { slope, intercept, r_squared })
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn median(xs: &[f64]) -> f64 {
    quantile_sorted(&sorted(xs), 0.5)
}

/// Distribution-free confidence interval for the median from order
/// statistics: the widest symmetric pair `(x_(j), x_(n+1-j))` such that the
/// binomial coverage is at least `confidence`.
pub fn median_ci(xs: &[f64], confidence: f64) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::invalid("median CI of empty sample"));
    }
    let s = sorted(xs);
    let n = s.len() as u64;
    let bin = Binomial::new(0.5, n).map_err(|e| Error::invalid(e.to_string()))?;
    let alpha = 1.0 - confidence;
    // Largest j (1-based) with P(B <= j - 1) <= alpha / 2.
    let mut j = 0u64;
    while j < n / 2 && bin.cdf(j) <= alpha / 2.0 {
        j += 1;
    }
    if j == 0 {
        return Ok((s[0], s[s.len() - 1]));
    }
    let lo = s[(j - 1) as usize];
    let hi = s[(n - j) as usize];
    Ok((lo, hi))
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = normal_quantile(0.5 + confidence / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Kolmogorov distribution survival function `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

impl KsOutcome {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// One-sample Kolmogorov–Smirnov test of integer samples on {1, 2, ...}
/// against Geometric(p) (number of trials up to and including the first
/// success). For a discrete null the asymptotic p-value is conservative.
pub fn ks_geometric(samples: &[u64], p: f64) -> Result<KsOutcome> {
    if samples.is_empty() {
        return Err(Error::invalid("KS test of empty sample"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("geometric parameter {p} outside (0, 1]")));
    }
    let mut s = samples.to_vec();
    s.sort_unstable();
    let n = s.len() as f64;
    let log_q = (-p).ln_1p();
    let cdf = |k: u64| -> f64 { -(log_q * k as f64).exp_m1() };

    let mut d: f64 = 0.0;
    let mut below = 0.0; // empirical CDF just before the current value
    let mut i = 0;
    while i < s.len() {
        let x = s[i];
        let mut j = i;
        while j < s.len() && s[j] == x {
            j += 1;
        }
        let at = j as f64 / n;
        if x >= 1 {
            d = d.max((below - cdf(x - 1)).abs());
        }
        d = d.max((at - cdf(x)).abs());
        below = at;
        i = j;
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok(KsOutcome { statistic: d, p_value: kolmogorov_sf(lambda), n: s.len() })
}

/// One-sided exact sign test: probability of at least `wins` successes out
/// of `wins + losses` fair coin flips. Ties are discarded by the caller.
pub fn sign_test_p(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let bin = Binomial::new(0.5, n).expect("valid binomial");
    if wins == 0 {
        1.0
    } else {
        bin.sf(wins - 1)
    }
}

/// One-sided paired t-test of `H1: mean(after - before) > 0`.
pub fn paired_t_test_greater(before: &[f64], after: &[f64]) -> Result<f64> {
    if before.len() != after.len() {
        return Err(Error::DimensionMismatch(before.len(), after.len()));
    }
    if before.len() < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    let diffs: Vec<f64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
    let m = mean(&diffs);
    let sd = sample_std(&diffs);
    if sd == 0.0 {
        return Ok(if m > 0.0 { 0.0 } else { 1.0 });
    }
    let t = m / (sd / (diffs.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (diffs.len() - 1) as f64)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(1.0 - dist.cdf(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let fit = least_squares(&xs, &ys).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-15);
        assert!((fit.intercept - 2.0).abs() < 1e-15);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn kolmogorov_tail_matches_tables() {
        // Classical critical values: 1.358 at 5%, 1.628 at 1%.
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.628) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn ks_rejects_wrong_parameter() {
        // Exact quantile sample of Geometric(0.5) against Geometric(0.1).
        let s: Vec<u64> = (0..200).map(|i| 1 + (i % 4) as u64 / 2).collect();
        assert!(!ks_geometric(&s, 0.1).unwrap().passes(0.01));
    }

    #[test]
    fn wilson_contains_point_estimate() {
        let (lo, hi) = wilson_interval(30, 100, 0.99);
        assert!(lo < 0.3 && 0.3 < hi);
        assert_eq!(wilson_interval(0, 10, 0.99).0, 0.0);
    }

    #[test]
    fn median_ci_brackets_median() {
        let xs: Vec<f64> = (1..=201).map(|i| i as f64).collect();
        let (lo, hi) = median_ci(&xs, 0.99).unwrap();
        assert!(lo < 101.0 && 101.0 < hi);
        // Binomial(201, 1/2) 0.5% quantile sits 18-19 places below the centre.
        assert!((80.0..=84.0).contains(&lo), "lo = {lo}");
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test_p(10, 0) - 1.0 / 1024.0).abs() < 1e-12);
        assert_eq!(sign_test_p(0, 0), 1.0);
    }
}
