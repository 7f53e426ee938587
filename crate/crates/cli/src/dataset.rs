//! Dataset files: one line of JSON declaring column roles, then CSV with a
//! header row.
//!
//! ```text
//! {"schema_version":1,"kind":"features","id":"id","attributes":["age_bin","gender"],"label":"label","features":["x0","x1"]}
//! id,age_bin,gender,label,x0,x1
//! 0,60+,male,1,1.0,-0.25
//! ```
//!
//! Scored files carry `score` (probability of the positive class) and an
//! optional `predicted` column instead of features.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use cmac_core::cohort::SampleRecord;
use cmac_core::fairness::{LabeledScores, ScoredRow};
use cmac_core::SubgroupKey;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Features,
    Scored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub kind: DatasetKind,
    pub id: String,
    pub attributes: Vec<String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Features {
        attributes: Vec<String>,
        records: Vec<SampleRecord>,
    },
    Scored {
        attributes: Vec<String>,
        scores: LabeledScores,
    },
}

impl Dataset {
    pub fn attributes(&self) -> &[String] {
        match self {
            Dataset::Features { attributes, .. } | Dataset::Scored { attributes, .. } => attributes,
        }
    }
}

fn fmt_f64(v: f64) -> String {
    // Debug formatting is the shortest text that parses back to the same bits.
    format!("{v:?}")
}

fn finish(header: &DatasetHeader, csv_writer: csv::Writer<Vec<u8>>) -> CliResult<String> {
    let body = csv_writer
        .into_inner()
        .map_err(|e| CliError::input(format!("csv: {e}")))?;
    let mut out = serde_json::to_string(header).map_err(|e| CliError::input(e.to_string()))?;
    out.push('\n');
    out.push_str(&String::from_utf8(body).map_err(|e| CliError::input(e.to_string()))?);
    Ok(out)
}

fn check_attributes(attributes: &[String], key: &SubgroupKey) -> CliResult<()> {
    if key.values().len() != attributes.len() {
        return Err(CliError::input(format!(
            "subgroup `{key}` has {} values but {} attributes are declared",
            key.values().len(),
            attributes.len()
        )));
    }
    Ok(())
}

pub fn features_to_string(attributes: &[String], records: &[SampleRecord]) -> CliResult<String> {
    let d = records.first().map_or(0, |r| r.features.len());
    let header = DatasetHeader {
        schema_version: DATASET_SCHEMA_VERSION,
        kind: DatasetKind::Features,
        id: "id".into(),
        attributes: attributes.to_vec(),
        label: "label".into(),
        features: (0..d).map(|i| format!("x{i}")).collect(),
        score: None,
        predicted: None,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut names = vec![header.id.clone()];
    names.extend(header.attributes.iter().cloned());
    names.push(header.label.clone());
    names.extend(header.features.iter().cloned());
    w.write_record(&names).map_err(|e| CliError::input(e.to_string()))?;
    for r in records {
        check_attributes(attributes, &r.subgroup)?;
        if r.features.len() != d {
            return Err(CliError::input(format!("record {} has {} features, expected {d}", r.id, r.features.len())));
        }
        let mut row = vec![r.id.to_string()];
        row.extend(r.subgroup.values().iter().cloned());
        row.push(r.label.to_string());
        row.extend(r.features.iter().map(|&v| fmt_f64(v)));
        w.write_record(&row).map_err(|e| CliError::input(e.to_string()))?;
    }
    finish(&header, w)
}

pub fn scored_to_string(attributes: &[String], scores: &LabeledScores) -> CliResult<String> {
    let with_pred = scores.rows().iter().any(|r| r.predicted.is_some());
    if with_pred && scores.rows().iter().any(|r| r.predicted.is_none()) {
        return Err(CliError::input("predictions must be given for every row or none"));
    }
    let header = DatasetHeader {
        schema_version: DATASET_SCHEMA_VERSION,
        kind: DatasetKind::Scored,
        id: "id".into(),
        attributes: attributes.to_vec(),
        label: "label".into(),
        features: Vec::new(),
        score: Some("score".into()),
        predicted: with_pred.then(|| "predicted".into()),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut names = vec!["id".to_string()];
    names.extend(attributes.iter().cloned());
    names.extend(["label".to_string(), "score".to_string()]);
    if with_pred {
        names.push("predicted".into());
    }
    w.write_record(&names).map_err(|e| CliError::input(e.to_string()))?;
    for r in scores.rows() {
        check_attributes(attributes, &r.subgroup)?;
        let mut row = vec![r.id.to_string()];
        row.extend(r.subgroup.values().iter().cloned());
        row.push(r.label.to_string());
        row.push(fmt_f64(r.score));
        if let Some(p) = r.predicted {
            row.push(p.to_string());
        }
        w.write_record(&row).map_err(|e| CliError::input(e.to_string()))?;
    }
    finish(&header, w)
}

pub fn parse_dataset(text: &str) -> CliResult<Dataset> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let header: DatasetHeader =
        serde_json::from_str(first).map_err(|e| CliError::input(format!("line 1: dataset header: {e}")))?;
    if header.schema_version != DATASET_SCHEMA_VERSION {
        return Err(CliError::input(format!(
            "line 1: dataset schema_version {} is not supported (expected {DATASET_SCHEMA_VERSION})",
            header.schema_version
        )));
    }
    if header.attributes.is_empty() || header.attributes.len() > 3 {
        return Err(CliError::input(format!(
            "line 1: expected 1 to 3 attribute columns, got {}",
            header.attributes.len()
        )));
    }
    match header.kind {
        DatasetKind::Features if header.features.is_empty() => {
            return Err(CliError::input("line 1: features dataset declares no feature columns"))
        }
        DatasetKind::Scored if header.score.is_none() => {
            return Err(CliError::input("line 1: scored dataset declares no score column"))
        }
        _ => {}
    }

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::input(format!("line 2: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let index: BTreeMap<&str, usize> = columns.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let col = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| CliError::input(format!("line 2: declared column `{name}` is missing")))
    };
    let id_col = col(&header.id)?;
    let attr_cols: Vec<usize> = header.attributes.iter().map(|a| col(a)).collect::<CliResult<_>>()?;
    let label_col = col(&header.label)?;
    let feature_cols: Vec<usize> = header.features.iter().map(|f| col(f)).collect::<CliResult<_>>()?;
    let score_col = header.score.as_deref().map(col).transpose()?;
    let pred_col = header.predicted.as_deref().map(col).transpose()?;

    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::input(format!("csv: {e}")))?;
        // One JSON line precedes the CSV text.
        let line = rec.position().map_or(0, |p| p.line()) + 1;
        let field = |c: usize, name: &str| -> CliResult<&str> {
            rec.get(c)
                .ok_or_else(|| CliError::input(format!("line {line}: column `{name}` is missing")))
        };
        let bad = |name: &str, v: &str, want: &str| {
            CliError::input(format!("line {line}, column `{name}`: expected {want}, got `{v}`"))
        };
        let id_text = field(id_col, &header.id)?;
        let id: u64 = id_text.parse().map_err(|_| bad(&header.id, id_text, "a non-negative integer id"))?;
        if !seen.insert(id) {
            return Err(CliError::input(format!("line {line}: duplicate id {id}")));
        }
        let mut values = Vec::with_capacity(attr_cols.len());
        for (&c, name) in attr_cols.iter().zip(&header.attributes) {
            let v = field(c, name)?;
            if v.is_empty() {
                return Err(CliError::input(format!("line {line}, column `{name}`: attribute is empty")));
            }
            values.push(v.to_string());
        }
        let subgroup = SubgroupKey::new(values);
        let label_text = field(label_col, &header.label)?;
        let label: u8 = match label_text {
            "0" => 0,
            "1" => 1,
            v => return Err(bad(&header.label, v, "0 or 1")),
        };
        match header.kind {
            DatasetKind::Features => {
                let mut features = Vec::with_capacity(feature_cols.len());
                for (&c, name) in feature_cols.iter().zip(&header.features) {
                    let v = field(c, name)?;
                    let x: f64 = v.parse().map_err(|_| bad(name, v, "a number"))?;
                    if !x.is_finite() {
                        return Err(bad(name, v, "a finite number"));
                    }
                    features.push(x);
                }
                records.push(SampleRecord {
                    id,
                    features,
                    label: usize::from(label),
                    subgroup,
                });
            }
            DatasetKind::Scored => {
                let name = header.score.as_deref().unwrap_or("score");
                let v = field(score_col.expect("checked above"), name)?;
                let score: f64 = v.parse().map_err(|_| bad(name, v, "a probability"))?;
                if !(0.0..=1.0).contains(&score) {
                    return Err(bad(name, v, "a probability in [0, 1]"));
                }
                let predicted = match pred_col {
                    Some(c) => {
                        let name = header.predicted.as_deref().unwrap_or("predicted");
                        match field(c, name)? {
                            "0" => Some(0),
                            "1" => Some(1),
                            v => return Err(bad(name, v, "0 or 1")),
                        }
                    }
                    None => None,
                };
                rows.push(ScoredRow {
                    id,
                    subgroup,
                    label,
                    score,
                    predicted,
                });
            }
        }
    }
    let attributes = header.attributes;
    match header.kind {
        DatasetKind::Features => Ok(Dataset::Features { attributes, records }),
        DatasetKind::Scored => Ok(Dataset::Scored {
            attributes,
            scores: LabeledScores::new(rows)?,
        }),
    }
}

pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn read_features(path: &Path) -> CliResult<(Vec<String>, Vec<SampleRecord>)> {
    match read_dataset(path)? {
        Dataset::Features { attributes, records } => Ok((attributes, records)),
        Dataset::Scored { .. } => Err(CliError::input(format!(
            "{}: dataset has no feature columns",
            path.display()
        ))),
    }
}

pub fn read_scored(path: &Path) -> CliResult<(Vec<String>, LabeledScores)> {
    match read_dataset(path)? {
        Dataset::Scored { attributes, scores } => Ok((attributes, scores)),
        Dataset::Features { .. } => Err(CliError::input(format!(
            "{}: dataset has no score column",
            path.display()
        ))),
    }
}
