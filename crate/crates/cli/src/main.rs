use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmac_cli::commands::{
    cmd_compare, cmd_evaluate, cmd_generate, cmd_train, CompareArgs, EvaluateArgs, GenerateArgs, ScoreSource,
    TrainArgs,
};
use cmac_cli::config::{parse_pair, RunConfig};
use cmac_cli::experiment::cmd_experiment;
use cmac_cli::{CliError, CliResult};
use cmac_core::trainer::Mode;

#[derive(Parser)]
#[command(name = "cmac", version, about = "Certainty-consistency fairness training and intersectional evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic cohort and write it as a features dataset.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Independent draw from the same population; 0 is the cohort itself.
        #[arg(long, default_value_t = 0)]
        draw: u64,
        /// Multiply every subgroup size.
        #[arg(long, default_value_t = 1)]
        scale: usize,
    },
    /// Train encoders on a features dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Train once per seed, writing `<out stem>_seed<k>.json`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Compute the fairness report for one model.
    Evaluate {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Attach percentile bootstrap intervals to every metric.
        #[arg(long)]
        bootstrap: bool,
        /// Override the number of bootstrap resamples.
        #[arg(long)]
        resamples: Option<usize>,
        /// Uncertainty zone as `lo,hi`.
        #[arg(long, value_parser = parse_pair)]
        zone: Option<(f64, f64)>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Per-subgroup KDE curves of certainty (CSV).
        #[arg(long)]
        kde_out: Option<PathBuf>,
        /// Per-subgroup metric values for bar charts (CSV).
        #[arg(long)]
        bars_out: Option<PathBuf>,
        /// Write the scores as a scored dataset.
        #[arg(long)]
        scores_out: Option<PathBuf>,
    },
    /// Compare two models scored on the same samples; `a` is the baseline.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Features dataset to score checkpoints on; when given, `a` and `b`
        /// are checkpoints rather than scored datasets.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, train ERM and CMAC for every seed, evaluate, compare and summarise.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true)]
struct SourceArgs {
    /// Scored dataset.
    #[arg(long, conflicts_with_all = ["checkpoint", "dataset"])]
    scores: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    checkpoint: Option<PathBuf>,
    /// Features dataset scored by `--checkpoint`.
    #[arg(long, requires = "checkpoint")]
    dataset: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: cmac_core::Error| e.to_string())
}

fn load_config(path: Option<&PathBuf>) -> CliResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::parse("")?),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { config, out, draw, scale } => {
            let cfg = RunConfig::load(&config)?;
            let summary = cmd_generate(&GenerateArgs {
                spec: cfg.cohort()?,
                out: &out,
                draw,
                scale,
            })?;
            print!("{summary}");
        }
        Command::Train { dataset, config, out, seeds, mode, lambda } => {
            let mut train = load_config(config.as_ref())?.train;
            if let Some(m) = mode {
                train.mode = m;
            }
            if let Some(l) = lambda {
                train.lambda_cmac = l;
            }
            for p in cmd_train(&TrainArgs { dataset: &dataset, config: train, out: &out, seeds })? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate {
            source,
            config,
            out,
            bootstrap,
            resamples,
            zone,
            threshold,
            kde_out,
            bars_out,
            scores_out,
        } => {
            let cfg = load_config(config.as_ref())?;
            let mut eval = cfg.evaluation;
            if let Some(z) = zone {
                eval.zone = z;
            }
            if let Some(t) = threshold {
                eval.threshold = t;
            }
            eval.validate().map_err(|e| cmac_cli::config::prefixed("evaluation", e))?;
            let boot = bootstrap.then(|| {
                let mut b = cfg.bootstrap.unwrap_or_default();
                if let Some(n) = resamples {
                    b.n_resamples = n;
                }
                b
            });
            if let Some(b) = &boot {
                b.validate().map_err(|e| cmac_cli::config::prefixed("bootstrap", e))?;
            }
            let src = match (&source.scores, &source.checkpoint, &source.dataset) {
                (Some(s), _, _) => ScoreSource::Scored(s),
                (None, Some(c), Some(d)) => ScoreSource::Model { checkpoint: c, dataset: d },
                _ => return Err(CliError::input("give --scores, or --checkpoint with --dataset")),
            };
            let report = cmd_evaluate(&EvaluateArgs {
                source: src,
                config: eval,
                bootstrap: boot,
                out: &out,
                kde_out: kde_out.as_deref(),
                bars_out: bars_out.as_deref(),
                scores_out: scores_out.as_deref(),
            })?;
            for f in &report.flags {
                eprintln!("note: {f}");
            }
        }
        Command::Compare { a, b, dataset, config, out } => {
            let threshold = load_config(config.as_ref())?.evaluation.threshold;
            let (sa, sb) = match &dataset {
                Some(d) => (
                    ScoreSource::Model { checkpoint: &a, dataset: d },
                    ScoreSource::Model { checkpoint: &b, dataset: d },
                ),
                None => (ScoreSource::Scored(&a), ScoreSource::Scored(&b)),
            };
            let c = cmd_compare(&CompareArgs { a: sa, b: sb, threshold, out: &out })?;
            for row in &c.impact {
                println!("{}\t{}", row.subgroup, row.display);
            }
            println!("total\t{}", c.impact_total.display);
        }
        Command::Experiment { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let s = cmd_experiment(&cfg, &out)?;
            for (mode, metrics) in &s.modes {
                if let Some(m) = metrics.get("aggregate.delta_tpr") {
                    println!("{mode}\tdelta_tpr mean {:.4}", m.mean);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
