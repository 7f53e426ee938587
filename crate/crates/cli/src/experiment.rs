//! Generate a cohort, train ERM and CMAC for every seed, evaluate, compare
//! and summarise, all from one config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cmac_core::cohort::{generate, generate_draw, stratified_split, SampleRecord};
use cmac_core::fairness::LabeledScores;
use cmac_core::report::{build_report, numeric_metrics, to_canonical_json, FairnessReport};
use cmac_core::trainer::{evaluate_model, Mode, TrainConfig};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::commands::{kde_csv, mode_name, save_model, train_one, write_file};
use crate::compare::compare;
use crate::config::RunConfig;
use crate::dataset::{features_to_string, scored_to_string};
use crate::error::{context, CliError, CliResult};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
const MODES: [Mode; 2] = [Mode::Erm, Mode::Cmac];

/// Mean over seeds with a two-sided 95% Student-t interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Absent with a single seed.
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    /// One value per seed, in seed order.
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let (ci_lo, ci_hi) = if values.len() < 2 {
            (None, None)
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("n >= 2").inverse_cdf(0.975);
            let half = t * (var / n).sqrt();
            (Some(mean - half), Some(mean + half))
        };
        Self { mean, ci_lo, ci_hi, values }
    }
}

/// CMAC against ERM on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEffect {
    pub seed: u64,
    /// `1 - dTPR_cmac / dTPR_erm`.
    pub delta_tpr_reduction: Option<f64>,
    /// `AUC_cmac - AUC_erm`.
    pub auc_change: Option<f64>,
    pub certainty_gap_change: Option<f64>,
    /// Change in the zone fraction of the lowest-separation subgroup.
    pub hard_zone_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub train_n: u64,
    pub eval_n: u64,
    /// `draw` for an independent draw, `test_split` otherwise.
    pub eval_source: String,
    /// The subgroup with the lowest configured separation.
    pub hard_subgroup: String,
    /// Mode, then metric path as in the reports.
    pub modes: BTreeMap<String, BTreeMap<String, MetricSummary>>,
    pub paired: Vec<SeedEffect>,
}

fn run_name(mode: Mode, seed: u64) -> String {
    format!("{}_seed{seed}", mode_name(mode))
}

struct Run {
    mode: Mode,
    seed: u64,
    report: FairnessReport,
    scores: LabeledScores,
}

fn summarize(runs: &[Run], seeds: &[u64]) -> BTreeMap<String, BTreeMap<String, MetricSummary>> {
    let mut modes = BTreeMap::new();
    for mode in MODES {
        let per_seed: Vec<BTreeMap<String, f64>> = seeds
            .iter()
            .map(|s| {
                let r = runs.iter().find(|r| r.mode == mode && r.seed == *s).expect("every run present");
                numeric_metrics(&r.report).into_iter().collect()
            })
            .collect();
        let mut metrics = BTreeMap::new();
        for name in per_seed[0].keys() {
            let values: Option<Vec<f64>> = per_seed.iter().map(|m| m.get(name).copied()).collect();
            if let Some(values) = values {
                metrics.insert(name.clone(), MetricSummary::new(values));
            }
        }
        modes.insert(mode_name(mode).to_string(), metrics);
    }
    modes
}

fn seed_effect(seed: u64, erm: &FairnessReport, cmac: &FairnessReport, hard: &str) -> SeedEffect {
    let (e, c) = (&erm.aggregate, &cmac.aggregate);
    let zone = |r: &FairnessReport| r.subgroups.get(hard).map(|s| s.uncertainty_zone_fraction);
    SeedEffect {
        seed,
        delta_tpr_reduction: e
            .delta_tpr
            .zip(c.delta_tpr)
            .filter(|(e, _)| *e > 0.0)
            .map(|(e, c)| 1.0 - c / e),
        auc_change: e.auc.zip(c.auc).map(|(e, c)| c - e),
        certainty_gap_change: e.certainty_gap.zip(c.certainty_gap).map(|(e, c)| c - e),
        hard_zone_change: zone(erm).zip(zone(cmac)).map(|(e, c)| c - e),
    }
}

fn summary_csv(s: &Summary) -> String {
    let mut out = String::from("mode,metric,mean,ci_lo,ci_hi\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
    for (mode, metrics) in &s.modes {
        for (name, m) in metrics {
            out.push_str(&format!("{mode},{name},{:?},{},{}\n", m.mean, opt(m.ci_lo), opt(m.ci_hi)));
        }
    }
    out
}

fn train_and_score(
    train_set: &[SampleRecord],
    eval_set: &[SampleRecord],
    base: &TrainConfig,
    mode: Mode,
    seed: u64,
) -> CliResult<(cmac_core::trainer::TrainedModel, LabeledScores)> {
    let cfg = TrainConfig {
        mode,
        seed,
        ..base.clone()
    };
    let model = train_one(train_set, &cfg)?;
    let scores = context(evaluate_model(&model, eval_set), "evaluate")?;
    Ok((model, scores))
}

/// Run the whole pipeline into `out`. Returns the summary.
pub fn cmd_experiment(cfg: &RunConfig, out: &Path) -> CliResult<Summary> {
    cfg.validate()?;
    let spec = cfg.cohort()?;
    let x = &cfg.experiment;
    let p = |rel: &str| -> PathBuf { out.join(rel) };

    write_file(&p("config.json"), &to_canonical_json(cfg)?)?;
    let cohort = context(generate(spec), "cohort")?;
    let split = context(stratified_split(&cohort, x.split, x.split_seed), "split")?;
    let (eval_set, eval_source) = if x.eval_draw_scale > 0 {
        (context(generate_draw(&spec.scaled(x.eval_draw_scale), 1), "evaluation draw")?, "draw")
    } else {
        (split.test.clone(), "test_split")
    };
    write_file(&p("data/cohort.csv"), &features_to_string(&spec.attributes, &cohort)?)?;
    write_file(&p("data/train.csv"), &features_to_string(&spec.attributes, &split.train)?)?;
    write_file(&p("data/eval.csv"), &features_to_string(&spec.attributes, &eval_set)?)?;

    let jobs: Vec<(Mode, u64)> = MODES.iter().flat_map(|&m| x.seeds.iter().map(move |&s| (m, s))).collect();
    let results: Vec<CliResult<_>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(mode, seed)| {
                let (train_set, eval_set) = (&split.train, &eval_set);
                scope.spawn(move || train_and_score(train_set, eval_set, &cfg.train, mode, seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });

    let bootstrap = if x.bootstrap {
        Some(cfg.bootstrap.clone().unwrap_or_default())
    } else {
        None
    };
    let mut runs = Vec::with_capacity(jobs.len());
    for (&(mode, seed), result) in jobs.iter().zip(results) {
        let (model, scores) = result?;
        let name = run_name(mode, seed);
        save_model(&model, &p(&format!("checkpoints/{name}.json")))?;
        write_file(&p(&format!("scores/{name}.csv")), &scored_to_string(&spec.attributes, &scores)?)?;
        let report = context(build_report(&scores, &cfg.evaluation, bootstrap.as_ref()), "report")?;
        write_file(&p(&format!("reports/{name}.json")), &report.to_json()?)?;
        write_file(&p(&format!("reports/{name}.kde.csv")), &kde_csv(&scores, &cfg.evaluation)?)?;
        runs.push(Run {
            mode,
            seed,
            report,
            scores,
        });
    }

    let hard = spec
        .subgroups
        .iter()
        .min_by(|a, b| a.separation.total_cmp(&b.separation))
        .map(|s| s.key.to_string())
        .ok_or_else(|| CliError::input("cohort has no subgroups"))?;
    let find = |mode: Mode, seed: u64| runs.iter().find(|r| r.mode == mode && r.seed == seed).expect("every run present");
    let mut paired = Vec::new();
    for &seed in &x.seeds {
        let (erm, cmac) = (find(Mode::Erm, seed), find(Mode::Cmac, seed));
        let c = compare(&erm.scores, &cmac.scores, cfg.evaluation.threshold)?;
        write_file(&p(&format!("comparisons/seed{seed}.json")), &to_canonical_json(&c)?)?;
        paired.push(seed_effect(seed, &erm.report, &cmac.report, &hard));
    }

    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        seeds: x.seeds.clone(),
        train_n: split.train.len() as u64,
        eval_n: eval_set.len() as u64,
        eval_source: eval_source.into(),
        hard_subgroup: hard,
        modes: summarize(&runs, &x.seeds),
        paired,
    };
    write_file(&p("summary.json"), &to_canonical_json(&summary)?)?;
    write_file(&p("summary.csv"), &summary_csv(&summary))?;
    Ok(summary)
}
