//! Gaussian-RBF Maximum Mean Discrepancy between one-dimensional score samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subgroup::SubgroupKey;

/// Floor applied to the median-heuristic bandwidth.
pub const MIN_BANDWIDTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// V-statistic over all pairs, diagonal included. Never negative.
    Biased,
    /// U-statistic without the within-sample diagonal. May be negative.
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidth: BandwidthMode,
    pub estimator: Estimator,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth: BandwidthMode::MedianHeuristic,
            estimator: Estimator::Biased,
        }
    }
}

impl KernelConfig {
    pub fn fixed(h: f64) -> Self {
        Self {
            bandwidth: BandwidthMode::Fixed(h),
            estimator: Estimator::Biased,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.bandwidth {
            BandwidthMode::Fixed(h) => check_bandwidth(h),
            BandwidthMode::MedianHeuristic => Ok(()),
        }
    }

    /// Bandwidth for comparing `x` against `y`.
    pub fn resolve(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self.bandwidth {
            BandwidthMode::Fixed(h) => check_bandwidth(h).map(|_| h),
            BandwidthMode::MedianHeuristic => {
                let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
                median_heuristic_bandwidth(&pooled)
            }
        }
    }
}

/// Alignment scores of one subgroup within a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub subgroup: SubgroupKey,
    scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(subgroup: SubgroupKey, scores: Vec<f64>) -> Result<Self> {
        check_scores(&scores)?;
        Ok(Self { subgroup, scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveBandwidth(h))
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty("score set"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidConfig("score set contains non-finite values".into()));
    }
    Ok(())
}

/// `exp(-(x - y)^2 / (2 h^2))`.
pub fn rbf_kernel(x: f64, y: f64, h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    Ok(kernel(x, y, h))
}

#[inline]
fn kernel(x: f64, y: f64, h: f64) -> f64 {
    let d = x - y;
    (-d * d / (2.0 * h * h)).exp()
}

/// d k(x, y) / dx.
#[inline]
fn kernel_dx(x: f64, y: f64, h: f64) -> f64 {
    -kernel(x, y, h) * (x - y) / (h * h)
}

/// Median of all pairwise absolute differences, floored at [`MIN_BANDWIDTH`].
pub fn median_heuristic_bandwidth(pooled: &[f64]) -> Result<f64> {
    check_scores(pooled)?;
    let n = pooled.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push((pooled[i] - pooled[j]).abs());
        }
    }
    if dists.is_empty() {
        return Ok(MIN_BANDWIDTH);
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    Ok(median.max(MIN_BANDWIDTH))
}

fn sum_within(x: &[f64], h: f64, diagonal: bool) -> f64 {
    let mut s = 0.0;
    for (i, &a) in x.iter().enumerate() {
        for (j, &b) in x.iter().enumerate() {
            if diagonal || i != j {
                s += kernel(a, b, h);
            }
        }
    }
    s
}

fn sum_across(x: &[f64], y: &[f64], h: f64) -> f64 {
    x.iter()
        .map(|&a| y.iter().map(|&b| kernel(a, b, h)).sum::<f64>())
        .sum()
}

fn lex_le(a: &[f64], b: &[f64]) -> bool {
    let by_value = a
        .iter()
        .zip(b)
        .map(|(p, q)| p.total_cmp(q))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal);
    by_value.then(a.len().cmp(&b.len())).is_le()
}

fn min_len(estimator: Estimator) -> usize {
    match estimator {
        Estimator::Biased => 1,
        Estimator::Unbiased => 2,
    }
}

fn check_pair(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<()> {
    check_scores(x)?;
    check_scores(y)?;
    let need = min_len(cfg.estimator);
    for len in [x.len(), y.len()] {
        if len < need {
            return Err(Error::TooFewSamples { need, got: len });
        }
    }
    Ok(())
}

/// Squared MMD at an explicit bandwidth.
pub fn mmd2_with_bandwidth(x: &[f64], y: &[f64], h: f64, estimator: Estimator) -> Result<f64> {
    check_bandwidth(h)?;
    check_pair(
        x,
        y,
        &KernelConfig {
            bandwidth: BandwidthMode::Fixed(h),
            estimator,
        },
    )?;
    // Evaluate in a canonical argument order so that swapping x and y is exact.
    let (x, y) = if lex_le(x, y) { (x, y) } else { (y, x) };
    let (m, n) = (x.len() as f64, y.len() as f64);
    let cross = sum_across(x, y, h) / (m * n);
    Ok(match estimator {
        Estimator::Biased => {
            sum_within(x, h, true) / (m * m) + sum_within(y, h, true) / (n * n) - 2.0 * cross
        }
        Estimator::Unbiased => {
            sum_within(x, h, false) / (m * (m - 1.0)) + sum_within(y, h, false) / (n * (n - 1.0))
                - 2.0 * cross
        }
    })
}

/// Squared MMD between two score samples.
pub fn mmd2(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<f64> {
    check_pair(x, y, cfg)?;
    let h = cfg.resolve(x, y)?;
    mmd2_with_bandwidth(x, y, h, cfg.estimator)
}

pub fn mmd2_sets(x: &ScoreSet, y: &ScoreSet, cfg: &KernelConfig) -> Result<f64> {
    mmd2(x.scores(), y.scores(), cfg)
}

/// Partial derivatives of MMD² with respect to every sample, bandwidth held fixed.
pub fn mmd2_grad_with_bandwidth(
    x: &[f64],
    y: &[f64],
    h: f64,
    estimator: Estimator,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_bandwidth(h)?;
    check_pair(
        x,
        y,
        &KernelConfig {
            bandwidth: BandwidthMode::Fixed(h),
            estimator,
        },
    )?;
    let (m, n) = (x.len() as f64, y.len() as f64);
    let (wx, wy) = match estimator {
        Estimator::Biased => (m * m, n * n),
        Estimator::Unbiased => (m * (m - 1.0), n * (n - 1.0)),
    };
    // The within-sample diagonal has zero derivative, so both estimators share
    // this form and differ only in normalization.
    let partial = |a: f64, own: &[f64], own_w: f64, other: &[f64]| {
        let within: f64 = own.iter().map(|&b| kernel_dx(a, b, h)).sum();
        let across: f64 = other.iter().map(|&b| kernel_dx(a, b, h)).sum();
        2.0 * within / own_w - 2.0 * across / (m * n)
    };
    let gx = x.iter().map(|&a| partial(a, x, wx, y)).collect();
    let gy = y.iter().map(|&b| partial(b, y, wy, x)).collect();
    Ok((gx, gy))
}

/// Gradient of [`mmd2`]; the median-heuristic bandwidth is treated as a constant.
pub fn mmd2_grad(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(x, y, cfg)?;
    let h = cfg.resolve(x, y)?;
    mmd2_grad_with_bandwidth(x, y, h, cfg.estimator)
}
