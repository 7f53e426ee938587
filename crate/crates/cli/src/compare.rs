//! Paired comparison of two models scored on the same samples.

use std::collections::{BTreeMap, BTreeSet};

use cmac_core::fairness::{
    confusion_by_subgroup, deodds, delta_tpr, dpd, format_impact, impact_table, ConfusionCounts, ImpactRow,
    LabeledScores, ScoredRow,
};
use cmac_core::stats::{delong_test, roc_auc, two_prop_ztest, wilcoxon_signed_rank, DeLongResult, WilcoxonResult, ZTestResult};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const COMPARISON_SCHEMA_VERSION: u32 = 1;
const MAX_LISTED_OFFENDERS: usize = 10;

/// A test result, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome<T> {
    /// `ok`, or a snake_case name for why the statistic is undefined.
    pub status: String,
    pub result: Option<T>,
    pub detail: Option<String>,
}

impl<T> Outcome<T> {
    fn from_result(r: cmac_core::Result<T>) -> Self {
        match r {
            Ok(v) => Outcome {
                status: "ok".into(),
                result: Some(v),
                detail: None,
            },
            Err(e) => Outcome {
                status: status_name(&e).into(),
                result: None,
                detail: Some(e.to_string()),
            },
        }
    }
}

fn status_name(e: &cmac_core::Error) -> &'static str {
    use cmac_core::Error as E;
    match e {
        E::DegenerateVariance(_) => "degenerate_variance",
        E::AllZeroDifferences => "all_zero_differences",
        E::DegeneratePooled(_) => "degenerate_pooled",
        E::TooFewSamples { .. } => "too_few_samples",
        E::SingleClass(_) => "single_class",
        E::NoEligibleSubgroups(_) => "no_eligible_subgroups",
        E::Empty(_) => "empty",
        _ => "error",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucComparison {
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `b - a`.
    pub difference: Option<f64>,
    pub delong: Outcome<DeLongResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeOddsComparison {
    /// Subgroups where both models have a defined DEOdds, in key order.
    pub subgroups: Vec<String>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    pub wilcoxon: Outcome<WilcoxonResult>,
}

/// A max-pairwise gap of each model, compared as two proportions over the
/// full sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapComparison {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub n: u64,
    pub ztest: Outcome<ZTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactEntry {
    pub subgroup: String,
    pub positives: u64,
    pub fn_a: u64,
    pub fn_b: u64,
    pub prevented: i64,
    pub relative: Option<f64>,
    /// Rendered as `prevented (relative%)`.
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub threshold: f64,
    pub n: u64,
    pub auc: AucComparison,
    pub deodds: DeOddsComparison,
    pub delta_tpr: GapComparison,
    pub dpd: GapComparison,
    /// False negatives of `a` prevented by `b`, per subgroup and in total.
    pub impact: Vec<ImpactEntry>,
    pub impact_total: ImpactEntry,
}

/// Align `b` to the row order of `a`. Every id must appear in both, with the
/// same label and subgroup.
pub fn pair_rows<'a>(a: &'a LabeledScores, b: &'a LabeledScores) -> CliResult<Vec<(&'a ScoredRow, &'a ScoredRow)>> {
    let by_id: BTreeMap<u64, &ScoredRow> = b.rows().iter().map(|r| (r.id, r)).collect();
    let ids_a: BTreeSet<u64> = a.rows().iter().map(|r| r.id).collect();
    let mut offenders: BTreeSet<u64> = BTreeSet::new();
    offenders.extend(by_id.keys().filter(|id| !ids_a.contains(id)));
    let mut pairs = Vec::with_capacity(a.len());
    for ra in a.rows() {
        match by_id.get(&ra.id) {
            Some(rb) if rb.label == ra.label && rb.subgroup == ra.subgroup => pairs.push((ra, *rb)),
            _ => {
                offenders.insert(ra.id);
            }
        }
    }
    if !offenders.is_empty() {
        let listed: Vec<String> = offenders.iter().take(MAX_LISTED_OFFENDERS).map(u64::to_string).collect();
        return Err(CliError::Pairing(format!(
            "{} sample ids are missing from one input or disagree in label or subgroup; first {}: {}",
            offenders.len(),
            listed.len(),
            listed.join(", ")
        )));
    }
    Ok(pairs)
}

fn gap_comparison(a: Option<f64>, b: Option<f64>, n: u64) -> GapComparison {
    let ztest = match (a, b) {
        (Some(ga), Some(gb)) => {
            let count = |g: f64| (g * n as f64).round() as u64;
            Outcome::from_result(two_prop_ztest(count(ga), n, count(gb), n))
        }
        _ => Outcome {
            status: "undefined_gap".into(),
            result: None,
            detail: None,
        },
    };
    GapComparison { a, b, n, ztest }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn impact_entry(subgroup: String, positives: u64, fn_a: u64, fn_b: u64, imp: &cmac_core::fairness::Impact) -> ImpactEntry {
    ImpactEntry {
        subgroup,
        positives,
        fn_a,
        fn_b,
        prevented: imp.prevented,
        relative: imp.relative,
        display: format_impact(imp),
    }
}

pub fn compare(a: &LabeledScores, b: &LabeledScores, threshold: f64) -> CliResult<Comparison> {
    let pairs = pair_rows(a, b)?;
    let labels: Vec<u8> = pairs.iter().map(|(r, _)| r.label).collect();
    let sa: Vec<f64> = pairs.iter().map(|(r, _)| r.score).collect();
    let sb: Vec<f64> = pairs.iter().map(|(_, r)| r.score).collect();
    let auc_a = roc_auc(&sa, &labels).ok();
    let auc_b = roc_auc(&sb, &labels).ok();
    let auc = AucComparison {
        a: auc_a,
        b: auc_b,
        difference: auc_a.zip(auc_b).map(|(x, y)| y - x),
        delong: Outcome::from_result(delong_test(&sa, &sb, &labels)),
    };

    let ca = confusion_by_subgroup(a, threshold)?;
    let cb = confusion_by_subgroup(b, threshold)?;
    let (da, db) = (deodds(&ca)?, deodds(&cb)?);
    let mut de = DeOddsComparison {
        subgroups: Vec::new(),
        a: Vec::new(),
        b: Vec::new(),
        mean_a: None,
        mean_b: None,
        wilcoxon: Outcome::from_result(Err(cmac_core::Error::Empty("paired DEOdds"))),
    };
    for (k, va) in &da.per_subgroup {
        if let Some(vb) = db.per_subgroup.get(k) {
            de.subgroups.push(k.to_string());
            de.a.push(*va);
            de.b.push(*vb);
        }
    }
    de.mean_a = mean(&de.a);
    de.mean_b = mean(&de.b);
    if !de.a.is_empty() {
        let diffs: Vec<f64> = de.b.iter().zip(&de.a).map(|(y, x)| y - x).collect();
        de.wilcoxon = Outcome::from_result(wilcoxon_signed_rank(&diffs));
    }

    let n = pairs.len() as u64;
    let gap = |c: &BTreeMap<_, ConfusionCounts>, f: fn(&BTreeMap<_, ConfusionCounts>) -> cmac_core::Result<cmac_core::fairness::Gap>| {
        f(c).ok().map(|g| g.value)
    };
    let delta_tpr_cmp = gap_comparison(gap(&ca, delta_tpr), gap(&cb, delta_tpr), n);
    let dpd_cmp = gap_comparison(gap(&ca, dpd), gap(&cb, dpd), n);

    let rows: Vec<ImpactRow> = ca
        .iter()
        .map(|(k, c)| {
            let other = cb.get(k).copied().unwrap_or_default();
            ImpactRow {
                subgroup: k.clone(),
                positives: c.positives(),
                fn_baseline: c.fn_,
                fn_new: other.fn_,
            }
        })
        .collect();
    let table = impact_table(&rows)?;
    let impact = table
        .rows
        .iter()
        .map(|(r, imp)| impact_entry(r.subgroup.to_string(), r.positives, r.fn_baseline, r.fn_new, imp))
        .collect();
    let total_pos = rows.iter().map(|r| r.positives).sum();
    let total_a = rows.iter().map(|r| r.fn_baseline).sum();
    let total_b = rows.iter().map(|r| r.fn_new).sum();
    let impact_total = impact_entry("total".into(), total_pos, total_a, total_b, &table.total);

    Ok(Comparison {
        schema_version: COMPARISON_SCHEMA_VERSION,
        threshold,
        n,
        auc,
        deodds: de,
        delta_tpr: delta_tpr_cmp,
        dpd: dpd_cmp,
        impact,
        impact_total,
    })
}
