//! Subgroup fairness and certainty metrics over scored samples, and the
//! false-negatives-prevented calculation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subgroup::SubgroupKey;

/// One scored sample. `score` is the probability of the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRow {
    pub id: u64,
    pub subgroup: SubgroupKey,
    pub label: u8,
    pub score: f64,
    /// Explicit prediction; when absent the threshold rule applies.
    pub predicted: Option<u8>,
}

impl ScoredRow {
    /// Probability assigned to the true class.
    pub fn certainty(&self) -> f64 {
        if self.label == 1 {
            self.score
        } else {
            1.0 - self.score
        }
    }

    pub fn prediction(&self, threshold: f64) -> u8 {
        self.predicted.unwrap_or(u8::from(self.score >= threshold))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledScores {
    rows: Vec<ScoredRow>,
}

impl LabeledScores {
    pub fn new(rows: Vec<ScoredRow>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for (i, r) in rows.iter().enumerate() {
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::InvalidConfig(format!(
                    "row {i}: score {} outside [0, 1]",
                    r.score
                )));
            }
            if r.label > 1 || r.predicted.is_some_and(|p| p > 1) {
                return Err(Error::InvalidConfig(format!("row {i}: labels must be 0 or 1")));
            }
            if !ids.insert(r.id) {
                return Err(Error::InvalidConfig(format!("row {i}: duplicate id {}", r.id)));
            }
        }
        Ok(Self { rows })
    }

    /// For resampled data, where ids repeat.
    pub(crate) fn from_rows_unchecked(rows: Vec<ScoredRow>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[ScoredRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<ScoredRow> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows grouped by subgroup, in canonical subgroup order.
    pub fn by_subgroup(&self) -> BTreeMap<&SubgroupKey, Vec<&ScoredRow>> {
        let mut m: BTreeMap<&SubgroupKey, Vec<&ScoredRow>> = BTreeMap::new();
        for r in &self.rows {
            m.entry(&r.subgroup).or_default().push(r);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn n(&self) -> u64 {
        self.positives() + self.negatives()
    }

    pub fn tpr(&self) -> Option<f64> {
        (self.positives() > 0).then(|| self.tp as f64 / self.positives() as f64)
    }

    pub fn fpr(&self) -> Option<f64> {
        (self.negatives() > 0).then(|| self.fp as f64 / self.negatives() as f64)
    }

    pub fn positive_rate(&self) -> Option<f64> {
        (self.n() > 0).then(|| (self.tp + self.fp) as f64 / self.n() as f64)
    }

    fn add(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

pub type CountsBySubgroup = BTreeMap<SubgroupKey, ConfusionCounts>;

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "threshold must be in (0, 1), got {threshold}"
        )))
    }
}

/// Confusion counts per subgroup. A score equal to the threshold is a positive
/// prediction.
pub fn confusion_by_subgroup(data: &LabeledScores, threshold: f64) -> Result<CountsBySubgroup> {
    check_threshold(threshold)?;
    let mut out = CountsBySubgroup::new();
    for r in data.rows() {
        let c = out.entry(r.subgroup.clone()).or_default();
        match (r.label, r.prediction(threshold)) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fn_ += 1,
            (_, 1) => c.fp += 1,
            _ => c.tn += 1,
        }
    }
    Ok(out)
}

/// Largest pairwise difference of a per-subgroup quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub value: f64,
    /// Subgroups attaining the minimum and maximum.
    pub low: SubgroupKey,
    pub high: SubgroupKey,
    /// Subgroups left out because the quantity is undefined for them.
    pub excluded: Vec<SubgroupKey>,
}

/// Max over pairs of |v(g) - v(g')|; `None` entries are excluded.
pub fn max_pairwise_gap(values: &BTreeMap<SubgroupKey, Option<f64>>, what: &'static str) -> Result<Gap> {
    let defined: Vec<(&SubgroupKey, f64)> = values.iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect();
    if defined.len() < 2 {
        return Err(Error::NoEligibleSubgroups(what));
    }
    let (mut lo, mut hi) = (defined[0], defined[0]);
    for &(k, v) in &defined[1..] {
        if v < lo.1 {
            lo = (k, v);
        }
        if v > hi.1 {
            hi = (k, v);
        }
    }
    Ok(Gap {
        value: hi.1 - lo.1,
        low: lo.0.clone(),
        high: hi.0.clone(),
        excluded: values.iter().filter(|(_, v)| v.is_none()).map(|(k, _)| k.clone()).collect(),
    })
}

fn rates(counts: &CountsBySubgroup, f: impl Fn(&ConfusionCounts) -> Option<f64>) -> BTreeMap<SubgroupKey, Option<f64>> {
    counts.iter().map(|(k, c)| (k.clone(), f(c))).collect()
}

/// Sensitivity gap. Subgroups without positives are excluded.
pub fn delta_tpr(counts: &CountsBySubgroup) -> Result<Gap> {
    max_pairwise_gap(&rates(counts, ConfusionCounts::tpr), "delta_tpr")
}

/// Positive-prediction-rate gap.
pub fn dpd(counts: &CountsBySubgroup) -> Result<Gap> {
    max_pairwise_gap(&rates(counts, ConfusionCounts::positive_rate), "dpd")
}

/// False-positive-rate gap. Subgroups without negatives are excluded.
pub fn delta_fpr(counts: &CountsBySubgroup) -> Result<Gap> {
    max_pairwise_gap(&rates(counts, ConfusionCounts::fpr), "delta_fpr")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeOdds {
    pub per_subgroup: BTreeMap<SubgroupKey, f64>,
    /// Unweighted mean over `per_subgroup`.
    pub mean: f64,
    pub pooled_tpr: f64,
    pub pooled_fpr: f64,
    /// Subgroups lacking positives or negatives.
    pub excluded: Vec<SubgroupKey>,
}

/// |TPR(g) - TPR| + |FPR(g) - FPR| against rates pooled over every sample.
pub fn deodds(counts: &CountsBySubgroup) -> Result<DeOdds> {
    let mut pooled = ConfusionCounts::default();
    counts.values().for_each(|c| pooled.add(c));
    let (Some(pooled_tpr), Some(pooled_fpr)) = (pooled.tpr(), pooled.fpr()) else {
        return Err(Error::DegeneratePopulation);
    };
    let mut per_subgroup = BTreeMap::new();
    let mut excluded = Vec::new();
    for (k, c) in counts {
        match (c.tpr(), c.fpr()) {
            (Some(t), Some(f)) => {
                per_subgroup.insert(k.clone(), (t - pooled_tpr).abs() + (f - pooled_fpr).abs());
            }
            _ => excluded.push(k.clone()),
        }
    }
    if per_subgroup.is_empty() {
        return Err(Error::NoEligibleSubgroups("deodds"));
    }
    let mean = per_subgroup.values().sum::<f64>() / per_subgroup.len() as f64;
    Ok(DeOdds {
        per_subgroup,
        mean,
        pooled_tpr,
        pooled_fpr,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    /// Worst pairwise statistic; may be infinite.
    #[serde(with = "crate::report::float_or_inf")]
    pub worst: f64,
}

fn tpr_values(tprs: &BTreeMap<SubgroupKey, Option<f64>>, what: &'static str) -> Result<Vec<f64>> {
    let v: Vec<f64> = tprs.values().flatten().copied().collect();
    if v.len() < 2 {
        return Err(Error::NoEligibleSubgroups(what));
    }
    Ok(v)
}

/// Differential fairness on TPR ratios from per-subgroup rates.
pub fn df_check_rates(tprs: &BTreeMap<SubgroupKey, Option<f64>>, epsilon: f64) -> Result<Verdict> {
    let v = tpr_values(tprs, "df_check")?;
    let max = v.iter().copied().fold(f64::MIN, f64::max);
    let min = v.iter().copied().fold(f64::MAX, f64::min);
    let worst = if max == min {
        1.0
    } else if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    };
    Ok(Verdict {
        pass: worst <= epsilon.exp(),
        worst,
    })
}

/// Pass iff every pairwise TPR ratio lies in [e^-eps, e^eps].
pub fn df_check(counts: &CountsBySubgroup, epsilon: f64) -> Result<Verdict> {
    df_check_rates(&rates(counts, ConfusionCounts::tpr), epsilon)
}

/// IF-alpha from per-subgroup rates: with d = |t - t'| and r = d / max(t, t'),
/// pass iff max over pairs of `alpha d + (1 - alpha) r` is at most `gamma`.
pub fn if_alpha_check_rates(tprs: &BTreeMap<SubgroupKey, Option<f64>>, alpha: f64, gamma: f64) -> Result<Verdict> {
    let v = tpr_values(tprs, "if_alpha_check")?;
    let mut worst: f64 = 0.0;
    for (i, &a) in v.iter().enumerate() {
        for &b in &v[i + 1..] {
            let abs = (a - b).abs();
            let top = a.max(b);
            let rel = if top > 0.0 { abs / top } else { 0.0 };
            worst = worst.max(alpha * abs + (1.0 - alpha) * rel);
        }
    }
    Ok(Verdict {
        pass: worst <= gamma,
        worst,
    })
}

pub fn if_alpha_check(counts: &CountsBySubgroup, alpha: f64, gamma: f64) -> Result<Verdict> {
    if_alpha_check_rates(&rates(counts, ConfusionCounts::tpr), alpha, gamma)
}

/// Mean certainty per subgroup.
pub fn mean_certainty(data: &LabeledScores) -> BTreeMap<SubgroupKey, f64> {
    data.by_subgroup()
        .into_iter()
        .map(|(k, rows)| {
            let m = rows.iter().map(|r| r.certainty()).sum::<f64>() / rows.len() as f64;
            (k.clone(), m)
        })
        .collect()
}

/// Largest difference in mean certainty between two subgroups.
pub fn certainty_gap(data: &LabeledScores) -> Result<Gap> {
    let means = mean_certainty(data).into_iter().map(|(k, v)| (k, Some(v))).collect();
    max_pairwise_gap(&means, "certainty_gap")
}

pub const DEFAULT_ZONE: (f64, f64) = (0.40, 0.60);

/// Fraction of each subgroup's certainty scores inside the closed `zone`.
pub fn uncertainty_zone_fraction(data: &LabeledScores, zone: (f64, f64)) -> BTreeMap<SubgroupKey, f64> {
    data.by_subgroup()
        .into_iter()
        .map(|(k, rows)| {
            let inside = rows
                .iter()
                .filter(|r| (zone.0..=zone.1).contains(&r.certainty()))
                .count();
            (k.clone(), inside as f64 / rows.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "h")]
pub enum KdeBandwidth {
    Silverman,
    Fixed(f64),
}

pub const KDE_GRID_POINTS: usize = 201;
pub const KDE_RANGE: (f64, f64) = (-0.1, 1.1);
/// Silverman bandwidths are capped so that a kernel centred on 0 or 1 keeps all
/// but 5e-4 of its mass inside the padded grid (3.29 sd = 0.1).
pub const KDE_MAX_SILVERMAN_H: f64 = 0.1 / 3.29;
pub const KDE_DEGENERATE_H: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    /// Silverman's rule was undefined (zero spread) and the fallback was used.
    pub degenerate: bool,
    /// Silverman's rule exceeded the cap.
    pub capped: bool,
}

impl KdeCurve {
    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

/// Gaussian KDE on 201 points over [-0.1, 1.1].
pub fn kde_curve(scores: &[f64], bandwidth: KdeBandwidth) -> Result<KdeCurve> {
    let n = scores.len();
    if n == 0 {
        return Err(Error::Empty("kde scores"));
    }
    let (mut degenerate, mut capped) = (false, false);
    let h = match bandwidth {
        KdeBandwidth::Fixed(h) => {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::NonPositiveBandwidth(h));
            }
            h
        }
        KdeBandwidth::Silverman => {
            let mean = scores.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let h = 1.06 * sd * (n as f64).powf(-0.2);
            let identical = scores.iter().all(|s| *s == scores[0]);
            if identical || !(h > 0.0) {
                degenerate = true;
                KDE_DEGENERATE_H
            } else if h > KDE_MAX_SILVERMAN_H {
                capped = true;
                KDE_MAX_SILVERMAN_H
            } else {
                h
            }
        }
    };
    let (a, b) = KDE_RANGE;
    let step = (b - a) / (KDE_GRID_POINTS - 1) as f64;
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| a + step * i as f64).collect();
    let density = x
        .iter()
        .map(|&xi| {
            norm * scores
                .iter()
                .map(|s| (-0.5 * ((xi - s) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok(KdeCurve {
        x,
        density,
        bandwidth: h,
        degenerate,
        capped,
    })
}

/// Input row of the clinical-impact table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactRow {
    pub subgroup: SubgroupKey,
    pub positives: u64,
    pub fn_baseline: u64,
    pub fn_new: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Impact {
    /// Negative when the new model misses more cases.
    pub prevented: i64,
    /// `prevented / fn_baseline`; `None` when the baseline has no false negatives.
    pub relative: Option<f64>,
}

/// False negatives prevented in a subgroup.
pub fn fn_prevented(positives: u64, fn_baseline: u64, fn_new: u64) -> Result<Impact> {
    if fn_baseline > positives || fn_new > positives {
        return Err(Error::InvalidConfig(format!(
            "false negatives ({fn_baseline}, {fn_new}) exceed positives {positives}"
        )));
    }
    let prevented = fn_baseline as i64 - fn_new as i64;
    Ok(Impact {
        prevented,
        relative: (fn_baseline > 0).then(|| prevented as f64 / fn_baseline as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactTable {
    pub rows: Vec<(ImpactRow, Impact)>,
    pub total: Impact,
}

pub fn impact_table(rows: &[ImpactRow]) -> Result<ImpactTable> {
    let mut out = Vec::with_capacity(rows.len());
    let (mut prevented, mut baseline) = (0i64, 0u64);
    for r in rows {
        let imp = fn_prevented(r.positives, r.fn_baseline, r.fn_new)?;
        prevented += imp.prevented;
        baseline += r.fn_baseline;
        out.push((r.clone(), imp));
    }
    Ok(ImpactTable {
        rows: out,
        total: Impact {
            prevented,
            relative: (baseline > 0).then(|| prevented as f64 / baseline as f64),
        },
    })
}

/// `"3 (60.0%)"`, the way impact cells are printed.
pub fn format_impact(i: &Impact) -> String {
    match i.relative {
        Some(r) => format!("{} ({:.1}%)", i.prevented, 100.0 * r),
        None => format!("{} (n/a)", i.prevented),
    }
}
