//! Small statistics toolkit: running moments and binomial confidence intervals.

use statrs::function::beta::beta_reg;

/// Welford accumulator for mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. parallel merge.
    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Two-sided Clopper–Pearson interval for `successes` out of `trials`.
///
/// `confidence` is the coverage of the interval, e.g. `0.99`.
pub fn clopper_pearson(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    assert!(trials > 0, "clopper_pearson needs at least one trial");
    assert!(successes <= trials);
    assert!(confidence > 0.0 && confidence < 1.0);
    let alpha = 1.0 - confidence;
    let x = successes as f64;
    let n = trials as f64;
    let lo = if successes == 0 {
        0.0
    } else {
        // P(X >= x | p) = I_p(x, n - x + 1) = alpha / 2
        bisect(|p| beta_reg(x, n - x + 1.0, p) - alpha / 2.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        // P(X <= x | p) = 1 - I_p(x + 1, n - x) = alpha / 2
        bisect(|p| beta_reg(x + 1.0, n - x, p) - (1.0 - alpha / 2.0))
    };
    (lo, hi)
}

/// Root of an increasing function on (0, 1).
fn bisect(f: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.25, 0.5];
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        let mean = xs.iter().sum::<f64>() / 6.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((m.mean() - mean).abs() < 1e-14);
        assert!((m.variance() - var).abs() < 1e-12);

        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..2].iter().for_each(|&x| a.push(x));
        xs[2..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert!((a.mean() - mean).abs() < 1e-14);
        assert!((a.variance() - var).abs() < 1e-12);
    }

    #[test]
    fn clopper_pearson_edges() {
        // all successes: lower endpoint is (alpha/2)^(1/n)
        let (lo, hi) = clopper_pearson(1000, 1000, 0.99);
        assert!((lo - 0.005f64.powf(1e-3)).abs() < 1e-9);
        assert_eq!(hi, 1.0);
        let (lo, hi) = clopper_pearson(0, 50, 0.99);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.005f64.powf(1.0 / 50.0))).abs() < 1e-9);
    }

    #[test]
    fn clopper_pearson_brackets_estimate() {
        // reference values from scipy.stats.beta.ppf
        let (lo, hi) = clopper_pearson(30, 100, 0.95);
        assert!((lo - 0.2124064).abs() < 1e-6, "{lo}");
        assert!((hi - 0.3998147).abs() < 1e-6, "{hi}");
    }
}
