//! Estimates with confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Default two-sided confidence level for every interval in the crate.
pub const DEFAULT_LEVEL: f64 = 0.99;

/// A Monte Carlo estimate with its standard error and a two-sided interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub estimate: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub n: u64,
}

impl EstimateWithCI {
    pub fn exact(value: f64) -> EstimateWithCI {
        EstimateWithCI {
            estimate: value,
            stderr: 0.0,
            ci_lo: value,
            ci_hi: value,
            level: 1.0,
            n: 0,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_hi - self.ci_lo)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci_lo <= x && x <= self.ci_hi
    }

    /// `|a - b| <= k * sqrt(se_a^2 + se_b^2)`.
    pub fn agrees_with(&self, other: &EstimateWithCI, k: f64) -> bool {
        let se = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        (self.estimate - other.estimate).abs() <= k * se
    }

    /// True when the intervals are disjoint and `self` lies above.
    pub fn above(&self, other: &EstimateWithCI) -> bool {
        self.ci_lo > other.ci_hi
    }
}

/// Two-sided standard normal quantile for the given confidence level.
pub fn z_for_level(level: f64) -> f64 {
    assert!(
        level > 0.0 && level < 1.0,
        "confidence level must be in (0,1)"
    );
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson(successes: u64, n: u64, level: f64) -> EstimateWithCI {
    assert!(n > 0, "wilson interval needs at least one trial");
    assert!(successes <= n);
    let z = z_for_level(level);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // the interval must contain the point estimate exactly at 0 and 1
    let (lo, hi) = (
        if successes == 0 {
            0.0
        } else {
            (center - half).max(0.0)
        },
        if successes == n {
            1.0
        } else {
            (center + half).min(1.0)
        },
    );
    EstimateWithCI {
        estimate: p,
        stderr: (p * (1.0 - p) / nf).sqrt(),
        ci_lo: lo,
        ci_hi: hi,
        level,
        n,
    }
}

/// Normal-approximation interval for a sample mean.
pub fn mean_ci(values: &[f64], level: f64) -> EstimateWithCI {
    let m = Moments::from_slice(values);
    m.mean_ci(level)
}

/// Count, sum and sum of squares; merging is commutative.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn from_slice(values: &[f64]) -> Moments {
        // sequential summation keeps results independent of worker count
        let mut m = Moments::default();
        for &v in values {
            m.push(v);
        }
        m
    }

    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn mean_ci(&self, level: f64) -> EstimateWithCI {
        assert!(self.n > 0);
        let mean = self.mean();
        let se = (self.variance() / self.n as f64).sqrt();
        let z = z_for_level(level);
        EstimateWithCI {
            estimate: mean,
            stderr: se,
            ci_lo: mean - z * se,
            ci_hi: mean + z * se,
            level,
            n: self.n,
        }
    }
}

/// Weighted pool-adjacent-violators fit, nondecreasing.
pub fn isotonic_increasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, n2) = blocks[blocks.len() - 1];
            let (m1, w1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let wt = w1 + w2;
            let m = if wt > 0.0 {
                (m1 * w1 + m2 * w2) / wt
            } else {
                0.5 * (m1 + m2)
            };
            *blocks.last_mut().unwrap() = (m, wt, n1 + n2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, n)| std::iter::repeat(m).take(n))
        .collect()
}

/// Weighted pool-adjacent-violators fit, nonincreasing.
pub fn isotonic_decreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = values.iter().map(|v| -v).collect();
    isotonic_increasing(&neg, weights)
        .into_iter()
        .map(|v| -v)
        .collect()
}

/// Distribution-free interval for the `p`-quantile of a sorted sample,
/// from normal-approximated binomial ranks.
pub fn quantile_ci(sorted: &[f64], p: f64, level: f64) -> (f64, f64, f64) {
    let n = sorted.len();
    assert!(n > 0);
    let nf = n as f64;
    let z = z_for_level(level);
    let sd = (nf * p * (1.0 - p)).sqrt();
    let rank = |r: f64| -> usize { (r.max(1.0).min(nf) as usize).saturating_sub(1) };
    let lo = sorted[rank((nf * p - z * sd).floor())];
    let hi = sorted[rank((nf * p + z * sd).ceil() + 1.0)];
    let point = sorted[rank((nf * p).ceil())];
    (point, lo, hi)
}
