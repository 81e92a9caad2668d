//! Sample statistics, pooling, regression and the two-sample
//! Kolmogorov–Smirnov test.

use std::cmp::Ordering;

/// Streaming mean/variance accumulator (Welford), mergeable by count-weighted
/// pooling.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let w = other.count as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.count as f64 * w;
        self.count = n;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for RunningMoments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = RunningMoments::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// Moments of `values` accumulated in sorted order, so the result is
/// bit-identical under any permutation of the input.
pub fn pooled_moments(values: &[f64]) -> RunningMoments {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.into_iter().collect()
}

/// Least-squares line `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if x.len() > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        slope_stderr,
    }
}

/// Survival function of the Kolmogorov distribution,
/// `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} exp(-2k²λ²)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.3 {
        // Jacobi dual form converges fast for small λ:
        // 1 - Q = √(2π)/λ Σ_{k≥1} exp(-(2k-1)²π²/(8λ²)).
        let c = (2.0 * std::f64::consts::PI).sqrt() / lambda;
        let mut s = 0.0;
        for k in 1..=5 {
            let m = (2 * k - 1) as f64;
            s += (-(m * m) * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        }
        return (1.0 - c * s).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    /// sup_x |F_1(x) - F_2(x)| over the pooled sample.
    pub statistic: f64,
    /// Asymptotic p-value `Q(√(n₁n₂/(n₁+n₂))·D)`.
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Two-sample Kolmogorov–Smirnov test. Both empirical CDFs are evaluated as
/// `#{x_i ≤ t}/n` after every tied value has been consumed, so identical
/// samples give `D = 0`.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> KsResult {
    assert!(!x.is_empty() && !y.is_empty(), "KS test needs non-empty samples");
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n1, n2) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n1 || j < n2 {
        let t = match (xs.get(i), ys.get(j)) {
            (Some(a), Some(b)) => match a.total_cmp(b) {
                Ordering::Greater => *b,
                _ => *a,
            },
            (Some(a), None) => *a,
            (None, Some(b)) => *b,
            (None, None) => unreachable!(),
        };
        while i < n1 && xs[i] <= t {
            i += 1;
        }
        while j < n2 && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    KsResult {
        statistic: d,
        p_value: kolmogorov_survival(ne.sqrt() * d),
        n1,
        n2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.25];
        let acc: RunningMoments = xs.iter().copied().collect();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((acc.mean() - mean).abs() < 1e-14);
        assert!((acc.variance() - var).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn merge_equals_single_pass(
            xs in proptest::collection::vec(-1e3f64..1e3, 1..50),
            split in 0usize..50,
        ) {
            let split = split.min(xs.len());
            let whole: RunningMoments = xs.iter().copied().collect();
            let mut left: RunningMoments = xs[..split].iter().copied().collect();
            let right: RunningMoments = xs[split..].iter().copied().collect();
            left.merge(&right);
            prop_assert_eq!(left.count(), whole.count());
            prop_assert!((left.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
            prop_assert!((left.variance() - whole.variance()).abs() <= 1e-7 * (1.0 + whole.variance()));
        }
    }

    #[test]
    fn pooling_ignores_order() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1013) as f64 * 0.1 + 1e8).collect();
        let mut ys = xs.clone();
        ys.reverse();
        ys.swap(3, 700);
        assert_eq!(pooled_moments(&xs), pooled_moments(&ys));
    }

    #[test]
    fn regression_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 0.25 * v).collect();
        let fit = linear_fit(&x, &y);
        assert!((fit.slope + 0.25).abs() < 1e-14);
        assert!((fit.intercept - 1.5).abs() < 1e-14);
        assert!(fit.slope_stderr < 1e-12);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Classical critical values: Q(1.3581) ≈ 0.05, Q(1.6276) ≈ 0.01.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        // Both series agree at the switch point.
        let a = kolmogorov_survival(0.2999999);
        let b = kolmogorov_survival(0.3000001);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let x = [0.0; 10];
        let r = ks_two_sample(&x, &x);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let y = [1.0, 2.0, 3.0];
        let z = [4.0, 5.0];
        assert_eq!(ks_two_sample(&y, &z).statistic, 1.0);
    }

    #[test]
    fn ks_handles_ties_across_samples() {
        let x = [1.0, 2.0, 2.0, 3.0];
        let y = [2.0, 2.0, 3.0, 4.0];
        // After consuming t = 2: F_x = 3/4, F_y = 2/4.
        let r = ks_two_sample(&x, &y);
        assert!((r.statistic - 0.25).abs() < 1e-15);
    }
}
