//! Training objectives and their gradients with respect to the similarity matrix.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::alignment::{alignment_margins, SimilarityBatch};
use crate::error::{Error, Result};
use crate::mmd::{self, BandwidthMode, KernelConfig};
use crate::subgroup::SubgroupKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_cmac: f64,
    pub temperature: f64,
    pub kernel: KernelConfig,
    /// Subgroups with fewer members in a batch are left out of the fairness term.
    pub min_subgroup_batch: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_cmac: 0.5,
            temperature: 0.07,
            kernel: KernelConfig::default(),
            min_subgroup_batch: 2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cmac.is_finite() && self.lambda_cmac >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_cmac must be >= 0, got {}",
                self.lambda_cmac
            )));
        }
        crate::alignment::check_temperature(self.temperature)?;
        if self.min_subgroup_batch == 0 {
            return Err(Error::InvalidConfig("min_subgroup_batch must be >= 1".into()));
        }
        self.kernel.validate()
    }
}

/// Subgroup membership of every batch row.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchAnnotations {
    pub subgroup_of: Vec<SubgroupKey>,
    /// Identity of the text paired with each row. Rows sharing a paired text are
    /// not distractors for one another when margins are formed.
    pub pair_class: Option<Vec<usize>>,
}

impl BatchAnnotations {
    pub fn new(subgroup_of: Vec<SubgroupKey>) -> Self {
        Self {
            subgroup_of,
            pair_class: None,
        }
    }

    pub fn with_pair_class(mut self, classes: Vec<usize>) -> Self {
        self.pair_class = Some(classes);
        self
    }

    pub fn len(&self) -> usize {
        self.subgroup_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subgroup_of.is_empty()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Symmetric InfoNCE over the batch: the mean of the image-to-text and
/// text-to-image cross-entropies with the diagonal as target.
pub fn clip_loss(batch: &SimilarityBatch) -> (f64, Array2<f64>) {
    let s = batch.matrix();
    let n = batch.len();
    let nf = n as f64;
    let mut grad = Array2::zeros((n, n));
    let mut row_loss = 0.0;
    let mut col_loss = 0.0;
    let scale = 0.5 / nf;

    for i in 0..n {
        let row = s.row(i);
        let lse = log_sum_exp(row.iter().copied());
        row_loss += lse - s[[i, i]];
        for j in 0..n {
            let p = (s[[i, j]] - lse).exp();
            grad[[i, j]] += scale * (p - if i == j { 1.0 } else { 0.0 });
        }
    }
    for j in 0..n {
        let col = s.column(j);
        let lse = log_sum_exp(col.iter().copied());
        col_loss += lse - s[[j, j]];
        for i in 0..n {
            let p = (s[[i, j]] - lse).exp();
            grad[[i, j]] += scale * (p - if i == j { 1.0 } else { 0.0 });
        }
    }
    (0.5 * (row_loss / nf + col_loss / nf), grad)
}

/// Average squared MMD over all pairs of sufficiently represented subgroups.
///
/// Returns the loss and its gradient with respect to each score. When fewer than
/// two subgroups reach `min_subgroup_batch`, both are zero.
pub fn cmac_loss(
    scores: &[f64],
    groups: &[SubgroupKey],
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    if scores.len() != groups.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: groups.len(),
        });
    }
    let included: Vec<Option<f64>> = scores.iter().copied().map(Some).collect();
    cmac_loss_partial(&included, groups, cfg)
}

/// [`cmac_loss`] where `None` rows take no part in the fairness term.
pub fn cmac_loss_partial(
    scores: &[Option<f64>],
    groups: &[SubgroupKey],
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    if scores.len() != groups.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: groups.len(),
        });
    }
    let mut by_group: BTreeMap<&SubgroupKey, Vec<usize>> = BTreeMap::new();
    for (i, (score, g)) in scores.iter().zip(groups).enumerate() {
        if score.is_some() {
            by_group.entry(g).or_default().push(i);
        }
    }
    let eligible: Vec<Vec<usize>> = by_group
        .into_values()
        .filter(|idx| idx.len() >= cfg.min_subgroup_batch)
        .collect();
    let mut grad = vec![0.0; scores.len()];
    if eligible.len() < 2 {
        return Ok((0.0, grad));
    }

    let values = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| scores[i].unwrap()).collect() };
    let samples: Vec<Vec<f64>> = eligible.iter().map(|idx| values(idx)).collect();
    let h = match cfg.kernel.bandwidth {
        BandwidthMode::Fixed(h) => h,
        BandwidthMode::MedianHeuristic => {
            let pooled: Vec<f64> = samples.iter().flatten().copied().collect();
            mmd::median_heuristic_bandwidth(&pooled)?
        }
    };

    let pairs = eligible.len() * (eligible.len() - 1) / 2;
    let weight = 1.0 / pairs as f64;
    let mut loss = 0.0;
    for a in 0..eligible.len() {
        for b in a + 1..eligible.len() {
            let (x, y) = (&samples[a], &samples[b]);
            loss += mmd::mmd2_with_bandwidth(x, y, h, cfg.kernel.estimator)?;
            let (gx, gy) = mmd::mmd2_grad_with_bandwidth(x, y, h, cfg.kernel.estimator)?;
            for (&i, g) in eligible[a].iter().zip(gx) {
                grad[i] += weight * g;
            }
            for (&i, g) in eligible[b].iter().zip(gy) {
                grad[i] += weight * g;
            }
        }
    }
    Ok((loss * weight, grad))
}

/// Result of [`total_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub loss: f64,
    pub clip: f64,
    /// Fairness term value; computed for monitoring even when its weight is zero.
    pub cmac: f64,
    /// Gradient of `loss` with respect to every similarity entry.
    pub grad: Array2<f64>,
}

/// `clip_loss + lambda * cmac_loss(alignment margins)`, differentiated jointly
/// through the same similarity entries.
pub fn total_loss(
    batch: &SimilarityBatch,
    groups: &BatchAnnotations,
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    if groups.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: groups.len(),
        });
    }
    let (clip, mut grad) = clip_loss(batch);
    let margins = alignment_margins(batch, groups.pair_class.as_deref())?;
    let scores: Vec<Option<f64>> = margins.iter().map(|m| m.map(|m| m.score)).collect();
    let (cmac, cmac_grad) = cmac_loss_partial(&scores, &groups.subgroup_of, cfg)?;

    if cfg.lambda_cmac == 0.0 {
        return Ok(TotalLoss {
            loss: clip,
            clip,
            cmac,
            grad,
        });
    }
    for (i, (m, g)) in margins.iter().zip(&cmac_grad).enumerate() {
        if let Some(m) = m {
            let w = cfg.lambda_cmac * g;
            grad[[i, i]] += w;
            grad[[i, m.rival]] -= w;
        }
    }
    Ok(TotalLoss {
        loss: clip + cfg.lambda_cmac * cmac,
        clip,
        cmac,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn keys(labels: &[&str]) -> Vec<SubgroupKey> {
        labels.iter().map(|l| SubgroupKey::new([*l])).collect()
    }

    #[test]
    fn clip_single_logit_is_zero() {
        let b = SimilarityBatch::from_rows(&[vec![3.0]], 1.0).unwrap();
        let (loss, grad) = clip_loss(&b);
        assert_eq!(loss, 0.0);
        assert_eq!(grad[[0, 0]], 0.0);
    }

    #[test]
    fn clip_uniform_is_log_n() {
        let b = SimilarityBatch::from_rows(&vec![vec![0.7; 4]; 4], 1.0).unwrap();
        assert_abs_diff_eq!(clip_loss(&b).0, 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(clip_loss(&b).0, 1.38629436, epsilon = 1e-8);
    }

    #[test]
    fn clip_two_by_two_matches_cross_entropy() {
        let b = SimilarityBatch::from_rows(&[vec![5.0, 0.0], vec![0.0, 5.0]], 1.0).unwrap();
        // -log(e^5 / (e^5 + e^0)) in both directions
        let direct = -(5f64.exp() / (5f64.exp() + 1.0)).ln();
        assert_abs_diff_eq!(clip_loss(&b).0, direct, epsilon = 1e-14);
        assert_abs_diff_eq!(clip_loss(&b).0, 0.00671535, epsilon = 1e-8);
    }

    #[test]
    fn cmac_single_subgroup_is_zero() {
        let cfg = LossConfig::default();
        let (loss, grad) = cmac_loss(&[0.1, 0.5, 0.9], &keys(&["a", "a", "a"]), &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn cmac_identical_multisets_is_zero() {
        let cfg = LossConfig::default();
        let (loss, _) = cmac_loss(
            &[0.1, 0.5, 0.9, 0.9, 0.1, 0.5],
            &keys(&["a", "a", "a", "b", "b", "b"]),
            &cfg,
        )
        .unwrap();
        assert!(loss.abs() <= 1e-12);
    }

    #[test]
    fn cmac_three_subgroups_average_pairs() {
        let cfg = LossConfig {
            kernel: KernelConfig::fixed(0.7),
            ..LossConfig::default()
        };
        let a = [0.1, 0.4];
        let b = [1.2, 0.9, 1.5];
        let c = [-0.3, 0.0];
        let scores: Vec<f64> = a.iter().chain(&b).chain(&c).copied().collect();
        let groups = keys(&["A", "A", "B", "B", "B", "C", "C"]);
        let (loss, _) = cmac_loss(&scores, &groups, &cfg).unwrap();
        let k = &cfg.kernel;
        let want = (mmd::mmd2(&a, &b, k).unwrap()
            + mmd::mmd2(&a, &c, k).unwrap()
            + mmd::mmd2(&b, &c, k).unwrap())
            / 3.0;
        assert_abs_diff_eq!(loss, want, epsilon = 1e-14);
    }

    #[test]
    fn cmac_skips_small_subgroups() {
        let cfg = LossConfig {
            kernel: KernelConfig::fixed(1.0),
            ..LossConfig::default()
        };
        // "c" has one member and is excluded; only (a, b) remains.
        let (loss, grad) =
            cmac_loss(&[0.0, 0.2, 1.0, 1.1, 5.0], &keys(&["a", "a", "b", "b", "c"]), &cfg).unwrap();
        let want = mmd::mmd2(&[0.0, 0.2], &[1.0, 1.1], &cfg.kernel).unwrap();
        assert_abs_diff_eq!(loss, want, epsilon = 1e-15);
        assert_eq!(grad[4], 0.0);
    }

    #[test]
    fn cmac_length_mismatch() {
        let cfg = LossConfig::default();
        assert_eq!(
            cmac_loss(&[0.0, 1.0], &keys(&["a"]), &cfg),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        );
    }

    #[test]
    fn total_with_zero_lambda_is_clip_exactly() {
        let rows = vec![
            vec![2.0, 0.3, -0.1, 0.5],
            vec![0.1, 1.5, 0.2, -0.7],
            vec![0.9, 0.4, 1.1, 0.0],
            vec![-0.2, 0.8, 0.3, 0.6],
        ];
        let b = SimilarityBatch::from_rows(&rows, 0.07).unwrap();
        let cfg = LossConfig {
            lambda_cmac: 0.0,
            ..LossConfig::default()
        };
        let groups = BatchAnnotations::new(keys(&["a", "a", "b", "b"]));
        let t = total_loss(&b, &groups, &cfg).unwrap();
        let (clip, grad) = clip_loss(&b);
        assert_eq!(t.loss.to_bits(), clip.to_bits());
        assert_eq!(t.grad, grad);
    }

    #[test]
    fn total_identical_subgroup_distributions() {
        // Rows 0,1 mirror rows 2,3 so both subgroups have the same margins.
        let rows = vec![
            vec![2.0, 0.5, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.2],
            vec![0.0, 0.0, 2.0, 0.5],
            vec![0.0, 0.2, 0.0, 1.0],
        ];
        let b = SimilarityBatch::from_rows(&rows, 1.0).unwrap();
        let groups = BatchAnnotations::new(keys(&["a", "a", "b", "b"]));
        let t = total_loss(&b, &groups, &LossConfig::default()).unwrap();
        assert_abs_diff_eq!(t.loss, clip_loss(&b).0, epsilon = 1e-12);
    }

    #[test]
    fn total_rejects_single_row() {
        let b = SimilarityBatch::from_rows(&[vec![1.0]], 1.0).unwrap();
        let groups = BatchAnnotations::new(keys(&["a"]));
        assert_eq!(
            total_loss(&b, &groups, &LossConfig::default()),
            Err(Error::BatchTooSmall(1))
        );
    }

    #[test]
    fn raising_the_diagonal_lowers_clip_loss() {
        let rows = vec![vec![0.5, 0.2, 0.1], vec![0.3, 0.4, 0.0], vec![0.1, 0.6, 0.2]];
        let mut prev = f64::INFINITY;
        for k in 0..10 {
            let mut r = rows.clone();
            for (i, row) in r.iter_mut().enumerate() {
                row[i] += k as f64 * 0.5;
            }
            let l = clip_loss(&SimilarityBatch::from_rows(&r, 1.0).unwrap()).0;
            assert!(l < prev);
            prev = l;
        }
    }

    proptest! {
        #[test]
        fn clip_is_nonnegative(rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 5), 5)) {
            let b = SimilarityBatch::from_rows(&rows, 1.0).unwrap();
            prop_assert!(clip_loss(&b).0 >= 0.0);
        }

        #[test]
        fn cmac_permutation_invariant_within_subgroup(
            a in prop::collection::vec(-3.0f64..3.0, 2..5),
            b in prop::collection::vec(-3.0f64..3.0, 2..5),
        ) {
            let cfg = LossConfig::default();
            let mut groups = vec![SubgroupKey::new(["a"]); a.len()];
            groups.extend(vec![SubgroupKey::new(["b"]); b.len()]);
            let scores: Vec<f64> = a.iter().chain(&b).copied().collect();
            let mut ra = a.clone();
            ra.reverse();
            let permuted: Vec<f64> = ra.iter().chain(&b).copied().collect();
            let l1 = cmac_loss(&scores, &groups, &cfg).unwrap().0;
            let l2 = cmac_loss(&permuted, &groups, &cfg).unwrap().0;
            prop_assert!((l1 - l2).abs() <= 1e-12);
        }
    }
}
