//! Monte Carlo summaries.

use serde::{Deserialize, Serialize};

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

impl Estimate {
    /// Sample mean and standard error of the mean.
    pub fn from_samples(xs: &[f64]) -> Self {
        let mut acc = Welford::default();
        xs.iter().for_each(|&x| acc.push(x));
        acc.estimate()
    }

    /// |self - other| measured in joint standard errors.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        z_score(self.mean - other.mean, joint_se(self.se, other.se))
    }

    /// |self - value| measured in standard errors of self.
    pub fn z_to(&self, value: f64) -> f64 {
        z_score(self.mean - value, self.se)
    }

    pub fn within(&self, value: f64, k: f64) -> bool {
        self.z_to(value) <= k
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if se > 0.0 {
        diff.abs() / se
    } else {
        f64::INFINITY
    }
}

pub fn joint_se(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Streaming mean / variance (Welford). Samples are pushed in a fixed order,
/// so the result is reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> Estimate {
        let se = if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        };
        Estimate {
            mean: self.mean,
            se,
            n: self.n,
        }
    }
}

/// Sample variance together with a delta-method standard error
/// `sqrt((m4 - s^4) / n)`.
pub fn variance_estimate(xs: &[f64]) -> Estimate {
    let n = xs.len();
    if n < 2 {
        return Estimate {
            mean: 0.0,
            se: 0.0,
            n: n as u64,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let (m2, m4) = xs.iter().fold((0.0, 0.0), |(a, b), &x| {
        let d2 = (x - mean) * (x - mean);
        (a + d2, b + d2 * d2)
    });
    let var = m2 / (n - 1) as f64;
    let m4 = m4 / n as f64;
    let se = ((m4 - var * var).max(0.0) / n as f64).sqrt();
    Estimate {
        mean: var,
        se,
        n: n as u64,
    }
}

/// Composite Simpson weights for `n_intervals` (even) panels of width `h`.
pub fn simpson_weights(n_intervals: usize, h: f64) -> Vec<f64> {
    assert!(
        n_intervals >= 2 && n_intervals.is_multiple_of(2),
        "Simpson's rule needs an even number of intervals"
    );
    (0..=n_intervals)
        .map(|i| {
            let w = if i == 0 || i == n_intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect()
}

/// Integrates independent pointwise estimates with Simpson's rule and
/// propagates their standard errors.
pub fn simpson_estimates(points: &[Estimate], h: f64) -> Estimate {
    let w = simpson_weights(points.len() - 1, h);
    let mean = w.iter().zip(points).map(|(w, p)| w * p.mean).sum();
    let var: f64 = w.iter().zip(points).map(|(w, p)| (w * p.se).powi(2)).sum();
    Estimate {
        mean,
        se: var.sqrt(),
        n: points.iter().map(|p| p.n).min().unwrap_or(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 2.0, 4.0, 7.0, 11.0];
        let e = Estimate::from_samples(&xs);
        assert_relative_eq!(e.mean, 5.0);
        let var = xs.iter().map(|x| (x - 5.0f64).powi(2)).sum::<f64>() / 4.0;
        assert_relative_eq!(e.se, (var / 5.0).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let h = 0.25;
        let pts: Vec<Estimate> = (0..=8)
            .map(|i| {
                let t = i as f64 * h;
                Estimate {
                    mean: t * t * t - t,
                    se: 0.0,
                    n: 1,
                }
            })
            .collect();
        // ∫_0^2 (t^3 - t) dt = 4 - 2
        assert_relative_eq!(simpson_estimates(&pts, h).mean, 2.0, epsilon = 1e-13);
    }

    #[test]
    fn z_distance_handles_zero_se() {
        let a = Estimate { mean: 1.0, se: 0.0, n: 1 };
        assert_eq!(a.z_to(1.0), 0.0);
        assert!(a.z_to(1.1).is_infinite());
    }
}
