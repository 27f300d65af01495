//! Streaming statistics helpers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Welford accumulator for mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningStats {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Parallel combination of two accumulators.
    ///
    /// Written in a symmetric form so `a.merged(&b)` and `b.merged(&a)` are
    /// bitwise identical.
    pub fn merged(&self, other: &RunningStats) -> RunningStats {
        if other.n == 0 {
            return *self;
        }
        if self.n == 0 {
            return *other;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        RunningStats {
            n: self.n + other.n,
            mean: (na * self.mean + nb * other.mean) / n,
            m2: self.m2 + other.m2 + delta * delta * (na * nb / n),
        }
    }

    /// Unbiased sample variance; `None` below two samples.
    pub fn variance(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.m2 / (self.n - 1) as f64)
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::default();
        iter.into_iter().for_each(|x| s.push(x));
        s
    }
}

/// Mean with a two-sided 95 % Student-t confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: f64,
    pub n: u64,
    /// Set when n < 2 and the half-width is reported as 0.
    pub degenerate: bool,
}

impl Estimate {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Option<Estimate> {
        let stats: RunningStats = values.into_iter().collect();
        Estimate::from_stats(&stats)
    }

    pub fn from_stats(stats: &RunningStats) -> Option<Estimate> {
        if stats.n == 0 {
            return None;
        }
        let (ci95, degenerate) = match stats.variance() {
            None => (0.0, true),
            Some(var) => (
                t_quantile_975(stats.n - 1) * (var / stats.n as f64).sqrt(),
                false,
            ),
        };
        Some(Estimate {
            mean: stats.mean,
            ci95,
            n: stats.n,
            degenerate,
        })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95
    }
}

/// 0.975 quantile of Student's t with `dof` degrees of freedom.
pub fn t_quantile_975(dof: u64) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}
