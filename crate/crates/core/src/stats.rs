//! Order-independent accumulation and the small set of estimators used by the
//! verification checks.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMean {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl SampleMean {
    /// Two-pass estimate; the standard error is zero for fewer than two samples.
    pub fn of(values: &[f64]) -> SampleMean {
        let n = values.len();
        if n == 0 {
            return SampleMean { mean: f64::NAN, std_error: f64::NAN, n };
        }
        let mean = compensated_sum(values.iter().copied()) / n as f64;
        if n < 2 {
            return SampleMean { mean, std_error: 0.0, n };
        }
        let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
        let var = (ss / (n - 1) as f64).max(0.0);
        SampleMean { mean, std_error: (var / n as f64).sqrt(), n }
    }
}

/// Hill estimator of the tail index from the `k` largest absolute values.
///
/// Returns `None` when fewer than `k + 1` positive samples are available.
pub fn hill_tail_index(samples: &[f64], k: usize) -> Option<f64> {
    let mut abs: Vec<f64> = samples
        .iter()
        .map(|x| x.abs())
        .filter(|x| x.is_finite() && *x > 0.0)
        .collect();
    if k == 0 || abs.len() <= k {
        return None;
    }
    abs.sort_by(|a, b| b.total_cmp(a));
    let threshold = abs[k];
    let sum_log = compensated_sum(abs[..k].iter().map(|x| (x / threshold).ln()));
    if sum_log <= 0.0 {
        return None;
    }
    Some(k as f64 / sum_log)
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let lo = f - i as f64 / n;
            let hi = (i + 1) as f64 / n - f;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn sample_mean_matches_hand_values() {
        let s = SampleMean::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert!((s.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        let one = SampleMean::of(&[7.0]);
        assert_eq!(one.std_error, 0.0);
    }

    #[test]
    fn hill_on_exact_pareto_quantiles() {
        // Deterministic Pareto(1.5) quantiles: x_i = (i/n)^{-1/1.5}.
        let n = 20_000;
        let xs: Vec<f64> = (1..=n).map(|i| (i as f64 / n as f64).powf(-1.0 / 1.5)).collect();
        let est = hill_tail_index(&xs, 400).unwrap();
        assert!((est - 1.5).abs() < 0.05, "{est}");
    }

    #[test]
    fn ks_of_uniform_grid_is_small() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d <= 0.0005 + 1e-12);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-9);
    }
}
