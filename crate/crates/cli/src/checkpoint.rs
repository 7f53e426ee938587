//! Checkpoint files: canonical JSON holding the encoders, the class text
//! inputs, the effective training configuration and the loss history.

use std::path::Path;

use cmac_core::alignment::ClassPrototypes;
use cmac_core::report::to_canonical_json;
use cmac_core::trainer::{EpochLosses, Encoders, TrainConfig, TrainedModel};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub temperature: f64,
    /// `d_in x d_emb`, row-major.
    pub image_weights: Vec<Vec<f64>>,
    pub text_weights: Vec<Vec<f64>>,
    pub class_texts: Vec<Vec<f64>>,
    pub history: Vec<EpochLosses>,
    pub infeasible_stratification: bool,
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> CliResult<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(CliError::input(format!("checkpoint.{name} must be a non-empty rectangular matrix")));
    }
    Array2::from_shape_vec((r, c), rows.concat()).map_err(|e| CliError::input(format!("checkpoint.{name}: {e}")))
}

impl Checkpoint {
    pub fn from_model(m: &TrainedModel) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            config: m.config.clone(),
            temperature: m.encoders.temperature,
            image_weights: rows_of(&m.encoders.image_weights),
            text_weights: rows_of(&m.encoders.text_weights),
            class_texts: m.class_texts.texts().to_vec(),
            history: m.history.clone(),
            infeasible_stratification: m.infeasible_stratification,
        }
    }

    pub fn into_model(self) -> CliResult<TrainedModel> {
        let image_weights = matrix("image_weights", &self.image_weights)?;
        let text_weights = matrix("text_weights", &self.text_weights)?;
        if image_weights.dim() != text_weights.dim() {
            return Err(CliError::input(format!(
                "checkpoint encoders disagree in shape: {:?} vs {:?}",
                image_weights.dim(),
                text_weights.dim()
            )));
        }
        let encoders = Encoders {
            image_weights,
            text_weights,
            temperature: self.temperature,
        };
        let class_texts = ClassPrototypes::new(self.class_texts).map_err(|e| CliError::input(format!("checkpoint.class_texts: {e}")))?;
        let prototypes = encoders
            .prototypes(&class_texts)
            .map_err(|e| CliError::input(format!("checkpoint: {e}")))?;
        Ok(TrainedModel {
            encoders,
            class_texts,
            prototypes,
            config: self.config,
            history: self.history,
            infeasible_stratification: self.infeasible_stratification,
        })
    }

    pub fn to_json(&self) -> CliResult<String> {
        Ok(to_canonical_json(self)?)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::input(format!("checkpoint json: {e}")))?;
        let version = v.get("schema_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(CHECKPOINT_SCHEMA_VERSION)) {
            return Err(CliError::input(format!(
                "checkpoint schema_version {version:?} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})"
            )));
        }
        serde_json::from_value(v).map_err(|e| CliError::input(format!("checkpoint: {e}")))
    }
}

pub fn read_checkpoint(path: &Path) -> CliResult<TrainedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::from_json(&text)
        .and_then(Checkpoint::into_model)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Per-epoch losses as CSV.
pub fn history_csv(history: &[EpochLosses]) -> String {
    let mut out = String::from("epoch,clip,cmac,total\n");
    for (i, h) in history.iter().enumerate() {
        out.push_str(&format!("{},{:?},{:?},{:?}\n", i + 1, h.clip, h.cmac, h.total));
    }
    out
}
