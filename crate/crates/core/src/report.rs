//! Fairness report assembly and canonical JSON serialization.
//!
//! Canonical JSON has sorted object keys, two-space indentation and every
//! floating-point number written with 17 significant digits, so a document
//! round-trips through parse and serialize byte for byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fairness::{
    certainty_gap, confusion_by_subgroup, deodds, delta_fpr, delta_tpr, df_check, dpd, if_alpha_check, kde_curve,
    mean_certainty, uncertainty_zone_fraction, ConfusionCounts, KdeBandwidth, KdeCurve, LabeledScores, ScoredRow,
    DEFAULT_ZONE,
};
use crate::stats::{bootstrap_cis, roc_auc, BootstrapConfig, ConfidenceInterval};
use crate::subgroup::SubgroupKey;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Serde adapter for `f64` fields that may hold an infinity, written as the
/// strings `"inf"` / `"-inf"`.
pub mod float_or_inf {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(de::Error::custom(format!("expected number or \"inf\", got \"{s}\""))),
        }
    }
}

fn write_canonical(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                let f = n.as_f64().expect("finite number");
                out.push_str(&format!("{f:.16e}"));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_canonical(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&serde_json::to_string(k).expect("key"));
                out.push_str(": ");
                write_canonical(&map[*k], indent + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Canonical JSON text of a value, with a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::InvalidConfig(format!("serialize: {e}")))?;
    let mut out = String::new();
    write_canonical(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

/// Re-emit arbitrary JSON text canonically.
pub fn canonicalize_json(text: &str) -> Result<String> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("json: {e}")))?;
    to_canonical_json(&v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub zone: (f64, f64),
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub kde_bandwidth: KdeBandwidth,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            zone: DEFAULT_ZONE,
            epsilon: 0.5,
            alpha: 0.5,
            gamma: 0.4,
            kde_bandwidth: KdeBandwidth::Silverman,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("evaluation.threshold must be in (0, 1), got {}", self.threshold));
        }
        if !(0.0..=1.0).contains(&self.zone.0) || !(0.0..=1.0).contains(&self.zone.1) || self.zone.0 > self.zone.1 {
            return bad(format!("evaluation.zone must be an ordered pair in [0, 1], got {:?}", self.zone));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!("evaluation.epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("evaluation.alpha must be in [0, 1], got {}", self.alpha));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad(format!("evaluation.gamma must be >= 0, got {}", self.gamma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupMetrics {
    pub n: u64,
    pub positives: u64,
    pub counts: ConfusionCounts,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub auc: Option<f64>,
    pub deodds: Option<f64>,
    pub mean_certainty: f64,
    pub uncertainty_zone_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub n: u64,
    pub auc: Option<f64>,
    pub delta_tpr: Option<f64>,
    pub dpd: Option<f64>,
    pub delta_fpr: Option<f64>,
    pub mean_deodds: Option<f64>,
    pub certainty_gap: Option<f64>,
    pub df_pass: Option<bool>,
    #[serde(with = "opt_float_or_inf")]
    pub df_worst_ratio: Option<f64>,
    pub if_alpha_pass: Option<bool>,
    pub if_alpha_worst: Option<f64>,
}

mod opt_float_or_inf {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct W(#[serde(with = "super::float_or_inf")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(W).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessReport {
    pub schema_version: u32,
    pub config: EvalConfig,
    /// Keyed by the `a|b|c` form of each subgroup.
    pub subgroups: BTreeMap<String, SubgroupMetrics>,
    pub aggregate: AggregateMetrics,
    /// Data-quality notes such as subgroups excluded from a rate gap.
    pub flags: Vec<String>,
    pub bootstrap: Option<BootstrapConfig>,
    /// Percentile intervals keyed by metric path, e.g. `aggregate.delta_tpr`.
    pub intervals: BTreeMap<String, ConfidenceInterval>,
}

impl FairnessReport {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("report json: {e}")))?;
        let version = v.get("schema_version").and_then(Value::as_u64);
        if version != Some(REPORT_SCHEMA_VERSION as u64) {
            return Err(Error::InvalidConfig(format!(
                "report schema_version {version:?} is not supported (expected {REPORT_SCHEMA_VERSION})"
            )));
        }
        serde_json::from_value(v).map_err(|e| Error::InvalidConfig(format!("report: {e}")))
    }
}

fn auc_of(rows: &[&ScoredRow]) -> Option<f64> {
    let s: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let y: Vec<u8> = rows.iter().map(|r| r.label).collect();
    roc_auc(&s, &y).ok()
}

/// Compute every metric without bootstrap intervals.
pub fn point_report(data: &LabeledScores, cfg: &EvalConfig) -> Result<FairnessReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("scored data"));
    }
    let counts = confusion_by_subgroup(data, cfg.threshold)?;
    let means = mean_certainty(data);
    let zones = uncertainty_zone_fraction(data, cfg.zone);
    let groups = data.by_subgroup();
    let mut flags = Vec::new();

    let de = deodds(&counts);
    let mut subgroups = BTreeMap::new();
    for (k, c) in &counts {
        if c.positives() == 0 {
            flags.push(format!("subgroup {k} has no positives; excluded from TPR-based metrics"));
        }
        if c.negatives() == 0 {
            flags.push(format!("subgroup {k} has no negatives; excluded from FPR-based metrics"));
        }
        subgroups.insert(
            k.to_string(),
            SubgroupMetrics {
                n: c.n(),
                positives: c.positives(),
                counts: *c,
                tpr: c.tpr(),
                fpr: c.fpr(),
                auc: auc_of(&groups[k]),
                deodds: de.as_ref().ok().and_then(|d| d.per_subgroup.get(k).copied()),
                mean_certainty: means[k],
                uncertainty_zone_fraction: zones[k],
            },
        );
    }

    let mut note = |what: &str, e: &Error| flags.push(format!("{what}: {e}"));
    let mut value = |what: &str, r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            note(what, &e);
            None
        }
    };
    let all: Vec<&ScoredRow> = data.rows().iter().collect();
    let auc = value("auc", roc_auc(&all.iter().map(|r| r.score).collect::<Vec<_>>(), &all.iter().map(|r| r.label).collect::<Vec<_>>()));
    let d_tpr = value("delta_tpr", delta_tpr(&counts).map(|g| g.value));
    let d_pd = value("dpd", dpd(&counts).map(|g| g.value));
    let d_fpr = value("delta_fpr", delta_fpr(&counts).map(|g| g.value));
    let mean_de = value("deodds", de.map(|d| d.mean));
    let c_gap = value("certainty_gap", certainty_gap(data).map(|g| g.value));
    let df = df_check(&counts, cfg.epsilon).ok();
    let ifa = if_alpha_check(&counts, cfg.alpha, cfg.gamma).ok();

    Ok(FairnessReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        subgroups,
        aggregate: AggregateMetrics {
            n: data.len() as u64,
            auc,
            delta_tpr: d_tpr,
            dpd: d_pd,
            delta_fpr: d_fpr,
            mean_deodds: mean_de,
            certainty_gap: c_gap,
            df_pass: df.map(|v| v.pass),
            df_worst_ratio: df.map(|v| v.worst),
            if_alpha_pass: ifa.map(|v| v.pass),
            if_alpha_worst: ifa.map(|v| v.worst),
        },
        flags,
        bootstrap: None,
        intervals: BTreeMap::new(),
    })
}

/// Finite numeric metrics of a report, keyed by path. Infinite ratios are left out.
pub fn numeric_metrics(r: &FairnessReport) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let a = &r.aggregate;
    for (name, v) in [
        ("auc", a.auc),
        ("delta_tpr", a.delta_tpr),
        ("dpd", a.dpd),
        ("delta_fpr", a.delta_fpr),
        ("mean_deodds", a.mean_deodds),
        ("certainty_gap", a.certainty_gap),
        ("df_worst_ratio", a.df_worst_ratio),
        ("if_alpha_worst", a.if_alpha_worst),
    ] {
        if let Some(v) = v.filter(|v| v.is_finite()) {
            out.push((format!("aggregate.{name}"), v));
        }
    }
    for (k, s) in &r.subgroups {
        for (name, v) in [
            ("tpr", s.tpr),
            ("fpr", s.fpr),
            ("auc", s.auc),
            ("deodds", s.deodds),
            ("mean_certainty", Some(s.mean_certainty)),
            ("uncertainty_zone_fraction", Some(s.uncertainty_zone_fraction)),
        ] {
            if let Some(v) = v {
                out.push((format!("subgroups.{k}.{name}"), v));
            }
        }
    }
    out
}

/// Full report; with `bootstrap`, every finite metric gets a percentile
/// interval from resampling within (subgroup, label) cells.
pub fn build_report(data: &LabeledScores, cfg: &EvalConfig, bootstrap: Option<&BootstrapConfig>) -> Result<FairnessReport> {
    let mut report = point_report(data, cfg)?;
    let Some(bcfg) = bootstrap else {
        return Ok(report);
    };
    let point = numeric_metrics(&report);
    let names: Vec<&str> = point.iter().map(|(n, _)| n.as_str()).collect();
    let mut cell_ids: BTreeMap<(&SubgroupKey, u8), usize> = BTreeMap::new();
    for r in data.rows() {
        let next = cell_ids.len();
        cell_ids.entry((&r.subgroup, r.label)).or_insert(next);
    }
    let strata: Vec<usize> = data.rows().iter().map(|r| cell_ids[&(&r.subgroup, r.label)]).collect();
    let metric = |rows: &[ScoredRow]| -> Result<Vec<f64>> {
        let resampled = LabeledScores::from_rows_unchecked(rows.to_vec());
        let m = numeric_metrics(&point_report(&resampled, cfg)?);
        let lookup: BTreeMap<&str, f64> = m.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        names
            .iter()
            .map(|n| lookup.get(n).copied().ok_or(Error::NoEligibleSubgroups("bootstrap metric")))
            .collect()
    };
    let cis = bootstrap_cis(data.rows(), Some(&strata), metric, bcfg)?;
    report.intervals = point.into_iter().map(|(n, _)| n).zip(cis).collect();
    report.bootstrap = Some(bcfg.clone());
    Ok(report)
}

/// Certainty-score density per subgroup.
pub fn kde_by_subgroup(data: &LabeledScores, bandwidth: KdeBandwidth) -> Result<BTreeMap<SubgroupKey, KdeCurve>> {
    data.by_subgroup()
        .into_iter()
        .map(|(k, rows)| {
            let c: Vec<f64> = rows.iter().map(|r| r.certainty()).collect();
            Ok((k.clone(), kde_curve(&c, bandwidth)?))
        })
        .collect()
}
