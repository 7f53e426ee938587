//! The subcommands, as library functions writing their artifacts to disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cmac_core::cohort::{generate_draw, positive_count, CohortSpec, SampleRecord};
use cmac_core::fairness::LabeledScores;
use cmac_core::report::{build_report, kde_by_subgroup, to_canonical_json, EvalConfig, FairnessReport};
use cmac_core::stats::BootstrapConfig;
use cmac_core::trainer::{default_class_texts, evaluate_model, train, Mode, TrainConfig, TrainedModel};

use crate::checkpoint::{history_csv, read_checkpoint, Checkpoint};
use crate::compare::{compare, Comparison};
use crate::dataset::{features_to_string, read_features, read_scored, scored_to_string};
use crate::error::{context, CliError, CliResult};

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Per-subgroup size and realised prevalence.
pub fn cohort_summary(spec: &CohortSpec, records: &[SampleRecord]) -> String {
    let mut out = String::from("subgroup\tn\tpositives\tprevalence\n");
    for sg in &spec.subgroups {
        let rows: Vec<&SampleRecord> = records.iter().filter(|r| r.subgroup == sg.key).collect();
        let pos = rows.iter().filter(|r| r.label == 1).count();
        let prev = if rows.is_empty() { 0.0 } else { pos as f64 / rows.len() as f64 };
        let _ = writeln!(out, "{}\t{}\t{}\t{:.3}", sg.key, rows.len(), pos, prev);
    }
    let _ = writeln!(out, "total\t{}", records.len());
    out
}

pub struct GenerateArgs<'a> {
    pub spec: &'a CohortSpec,
    pub out: &'a Path,
    /// Independent draw index; 0 is the cohort itself.
    pub draw: u64,
    pub scale: usize,
}

/// Returns the printed summary.
pub fn cmd_generate(a: &GenerateArgs) -> CliResult<String> {
    if a.scale == 0 {
        return Err(CliError::input("--scale must be >= 1"));
    }
    let spec = a.spec.scaled(a.scale);
    let records = context(generate_draw(&spec, a.draw), "cohort")?;
    write_file(a.out, &features_to_string(&spec.attributes, &records)?)?;
    debug_assert_eq!(
        records.iter().filter(|r| r.label == 1).count(),
        spec.subgroups.iter().map(|s| positive_count(s.n, s.prevalence)).sum::<usize>()
    );
    Ok(cohort_summary(&spec, &records))
}

/// Where the checkpoint for one seed goes: `out` itself for a single run,
/// `<stem>_seed<k>.json` beside it when a seed list is given.
pub fn seed_path(out: &Path, seed: Option<u64>) -> PathBuf {
    match seed {
        None => out.to_path_buf(),
        Some(s) => {
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
            out.with_file_name(format!("{stem}_seed{s}.json"))
        }
    }
}

pub fn history_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    checkpoint.with_file_name(format!("{stem}.history.csv"))
}

pub fn train_one(records: &[SampleRecord], cfg: &TrainConfig) -> CliResult<TrainedModel> {
    let d_in = records.first().map_or(0, |r| r.features.len());
    let texts = context(default_class_texts(2, d_in), "class texts")?;
    context(train(records, &texts, cfg), "train")
}

pub fn save_model(model: &TrainedModel, path: &Path) -> CliResult<()> {
    write_file(path, &Checkpoint::from_model(model).to_json()?)?;
    write_file(&history_path(path), &history_csv(&model.history))
}

pub struct TrainArgs<'a> {
    pub dataset: &'a Path,
    pub config: TrainConfig,
    pub out: &'a Path,
    pub seeds: Option<Vec<u64>>,
}

/// Returns the checkpoint paths written.
pub fn cmd_train(a: &TrainArgs) -> CliResult<Vec<PathBuf>> {
    let (_, records) = read_features(a.dataset)?;
    a.config.validate().map_err(|e| crate::config::prefixed("train", e))?;
    let runs: Vec<Option<u64>> = match &a.seeds {
        None => vec![None],
        Some(s) => s.iter().copied().map(Some).collect(),
    };
    let mut written = Vec::new();
    for seed in runs {
        let mut cfg = a.config.clone();
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let model = train_one(&records, &cfg)?;
        let path = seed_path(a.out, seed);
        save_model(&model, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Where evaluation gets its scores.
pub enum ScoreSource<'a> {
    Scored(&'a Path),
    Model { checkpoint: &'a Path, dataset: &'a Path },
}

pub struct EvaluateArgs<'a> {
    pub source: ScoreSource<'a>,
    pub config: EvalConfig,
    pub bootstrap: Option<BootstrapConfig>,
    pub out: &'a Path,
    pub kde_out: Option<&'a Path>,
    pub bars_out: Option<&'a Path>,
    pub scores_out: Option<&'a Path>,
}

pub fn load_scores(source: &ScoreSource) -> CliResult<(Vec<String>, LabeledScores)> {
    match source {
        ScoreSource::Scored(p) => read_scored(p),
        ScoreSource::Model { checkpoint, dataset } => {
            let model = read_checkpoint(checkpoint)?;
            let (attributes, records) = read_features(dataset)?;
            Ok((attributes, context(evaluate_model(&model, &records), "evaluate")?))
        }
    }
}

/// KDE curves as `subgroup,x,density` rows.
pub fn kde_csv(scores: &LabeledScores, cfg: &EvalConfig) -> CliResult<String> {
    let curves = context(kde_by_subgroup(scores, cfg.kde_bandwidth), "kde")?;
    let mut out = String::from("subgroup,x,density\n");
    for (k, c) in curves {
        for (x, d) in c.x.iter().zip(&c.density) {
            let _ = writeln!(out, "{k},{x:?},{d:?}");
        }
    }
    Ok(out)
}

/// Per-subgroup bar-chart data: `subgroup,metric,value,lo,hi`, with empty
/// bounds when no interval was computed.
pub fn bars_csv(report: &FairnessReport) -> String {
    let mut out = String::from("subgroup,metric,value,lo,hi\n");
    for (k, s) in &report.subgroups {
        for (name, v) in [
            ("tpr", s.tpr),
            ("fpr", s.fpr),
            ("auc", s.auc),
            ("deodds", s.deodds),
            ("mean_certainty", Some(s.mean_certainty)),
            ("uncertainty_zone_fraction", Some(s.uncertainty_zone_fraction)),
        ] {
            let Some(v) = v else { continue };
            let (lo, hi) = report
                .intervals
                .get(&format!("subgroups.{k}.{name}"))
                .map_or((String::new(), String::new()), |ci| (format!("{:?}", ci.lo), format!("{:?}", ci.hi)));
            let _ = writeln!(out, "{k},{name},{v:?},{lo},{hi}");
        }
    }
    out
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<FairnessReport> {
    let (attributes, scores) = load_scores(&a.source)?;
    let report = context(build_report(&scores, &a.config, a.bootstrap.as_ref()), "report")?;
    write_file(a.out, &report.to_json()?)?;
    if let Some(p) = a.kde_out {
        write_file(p, &kde_csv(&scores, &a.config)?)?;
    }
    if let Some(p) = a.bars_out {
        write_file(p, &bars_csv(&report))?;
    }
    if let Some(p) = a.scores_out {
        write_file(p, &scored_to_string(&attributes, &scores)?)?;
    }
    Ok(report)
}

pub struct CompareArgs<'a> {
    pub a: ScoreSource<'a>,
    pub b: ScoreSource<'a>,
    pub threshold: f64,
    pub out: &'a Path,
}

pub fn cmd_compare(a: &CompareArgs) -> CliResult<Comparison> {
    let (_, sa) = load_scores(&a.a)?;
    let (_, sb) = load_scores(&a.b)?;
    let c = compare(&sa, &sb, a.threshold)?;
    write_file(a.out, &to_canonical_json(&c)?)?;
    Ok(c)
}

pub fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Erm => "erm",
        Mode::Cmac => "cmac",
    }
}
