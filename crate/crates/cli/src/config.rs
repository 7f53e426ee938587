//! The run configuration: one TOML document with optional sections for the
//! cohort, training, evaluation, bootstrap and experiment settings.

use std::path::Path;

use cmac_core::cohort::CohortSpec;
use cmac_core::report::EvalConfig;
use cmac_core::stats::BootstrapConfig;
use cmac_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cohort: Option<CohortSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
    pub bootstrap: Option<BootstrapConfig>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
    /// When positive, models are evaluated on an independent draw from the
    /// cohort with every subgroup this many times its configured size, instead
    /// of on the test split.
    pub eval_draw_scale: usize,
    /// Attach bootstrap intervals to every report.
    pub bootstrap: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            split: [0.6, 0.2, 0.2],
            split_seed: 0,
            eval_draw_scale: 0,
            bootstrap: false,
        }
    }
}

pub fn prefixed(section: &str, e: cmac_core::Error) -> CliError {
    match e {
        cmac_core::Error::InvalidConfig(m) if m.starts_with(section) => CliError::Input(m),
        cmac_core::Error::InvalidConfig(m) => CliError::Input(format!("{section}.{m}")),
        other => CliError::Input(format!("{section}: {other}")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::input(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        if let Some(c) = &self.cohort {
            c.validate().map_err(|e| prefixed("cohort", e))?;
        }
        self.train.validate().map_err(|e| prefixed("train", e))?;
        self.evaluation.validate().map_err(|e| prefixed("evaluation", e))?;
        if let Some(b) = &self.bootstrap {
            b.validate().map_err(|e| prefixed("bootstrap", e))?;
        }
        let x = &self.experiment;
        if x.seeds.is_empty() {
            return Err(CliError::input("experiment.seeds must not be empty"));
        }
        let mut sorted = x.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != x.seeds.len() {
            return Err(CliError::input("experiment.seeds must be distinct"));
        }
        let total: f64 = x.split.iter().sum();
        if x.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (total - 1.0).abs() > 1e-9 || x.split[0] == 0.0 {
            return Err(CliError::input(format!(
                "experiment.split must be non-negative fractions summing to 1 with a non-empty training part, got {:?}",
                x.split
            )));
        }
        if x.eval_draw_scale == 0 && x.split[2] == 0.0 {
            return Err(CliError::input(
                "experiment.split leaves no test part and eval_draw_scale is 0",
            ));
        }
        Ok(())
    }

    pub fn cohort(&self) -> CliResult<&CohortSpec> {
        self.cohort
            .as_ref()
            .ok_or_else(|| CliError::input("config has no [cohort] section"))
    }
}

/// Parse `"0.4,0.6"`.
pub fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((p(a)?, p(b)?))
}
