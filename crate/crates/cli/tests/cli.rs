use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmac_cli::config::RunConfig;
use cmac_core::cohort::named_spec;
use cmac_core::report::FairnessReport;
use serde_json::Value;

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn cmac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cmac(args);
    assert!(
        out.status.success(),
        "cmac {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = cmac(args);
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&read(p)).unwrap()
}

#[test]
fn shipped_configs_parse_and_derm6_matches_builtin() {
    let derm = RunConfig::load(&repo("configs/derm6.toml")).unwrap();
    assert_eq!(derm.cohort.as_ref().unwrap(), &named_spec("derm6").unwrap());
    let oph = RunConfig::load(&repo("configs/oph8.toml")).unwrap();
    assert_eq!(oph.cohort.as_ref().unwrap(), &named_spec("oph8").unwrap());
}

#[test]
fn generate_derm6_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let summary = ok(&["generate", "--config", s(&repo("configs/derm6.toml")), "--out", s(&a)]);
    ok(&["generate", "--config", s(&repo("configs/derm6.toml")), "--out", s(&b)]);
    assert_eq!(read(&a), read(&b));
    assert!(summary.contains("total\t1200"), "{summary}");
    assert_eq!(summary.lines().count(), 1 + 6 + 1);

    let text = read(&a);
    // header line, column names, 1200 rows
    assert_eq!(text.lines().count(), 2 + 1200);
    let keys: std::collections::BTreeSet<String> = text
        .lines()
        .skip(2)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            format!("{}|{}", f[1], f[2])
        })
        .collect();
    assert_eq!(keys.len(), 6);
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = read(&repo("configs/derm6.toml")).replace("prevalence = 0.270", "prevalence = 1.2");
    std::fs::write(&cfg, text).unwrap();
    let err = fails_with(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("x.csv"))], 2);
    assert!(err.contains("cohort.subgroups[2].prevalence"), "{err}");

    std::fs::write(&cfg, "[cohort]\nattributes = [\"a\"]\nd_in = 4\nnoise_sigma = 1.0\nseed = 1\nsubgroups = []\ncolour = 3\n").unwrap();
    let err = fails_with(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("x.csv"))], 2);
    assert!(err.contains("colour") && err.contains("line 7"), "{err}");
}

#[test]
fn erm_and_zero_lambda_checkpoints_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = repo("fixtures/loss64.csv");
    let cfg = repo("fixtures/loss64.toml");
    let (a, b) = (dir.path().join("erm.json"), dir.path().join("cmac0.json"));
    ok(&["train", "--dataset", s(&data), "--config", s(&cfg), "--out", s(&a), "--mode", "erm"]);
    ok(&["train", "--dataset", s(&data), "--config", s(&cfg), "--out", s(&b), "--mode", "cmac", "--lambda", "0"]);
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&dir.path().join("erm.history.csv")), read(&dir.path().join("cmac0.history.csv")));
}

#[test]
fn seed_list_writes_distinct_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("model.json");
    let printed = ok(&[
        "train",
        "--dataset",
        s(&repo("fixtures/loss64.csv")),
        "--config",
        s(&repo("fixtures/loss64.toml")),
        "--out",
        s(&out),
        "--seeds",
        "1,2,3",
    ]);
    assert_eq!(printed.lines().count(), 3);
    let texts: Vec<String> = (1..=3).map(|k| read(&dir.path().join(format!("model_seed{k}.json")))).collect();
    let weights: Vec<Value> = texts
        .iter()
        .map(|t| serde_json::from_str::<Value>(t).unwrap()["image_weights"].clone())
        .collect();
    assert_ne!(weights[0], weights[1]);
    assert_ne!(weights[1], weights[2]);
    assert_ne!(weights[0], weights[2]);
}

#[test]
fn two_epochs_on_the_shipped_fixture_lower_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    ok(&["train", "--dataset", s(&repo("fixtures/loss64.csv")), "--config", s(&repo("fixtures/loss64.toml")), "--out", s(&out)]);
    let ck = json(&out);
    let h = ck["history"].as_array().unwrap();
    assert_eq!(h.len(), 2);
    assert!(h[1]["total"].as_f64().unwrap() <= h[0]["total"].as_f64().unwrap());
    assert_eq!(ck["schema_version"], 1);
}

#[test]
fn training_on_a_scored_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails_with(
        &["train", "--dataset", s(&repo("fixtures/table3_erm.csv")), "--out", s(&dir.path().join("m.json"))],
        2,
    );
    assert!(err.contains("no feature columns"), "{err}");
}

#[test]
fn divergence_exits_3_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nepochs = 3\nbatch_size = 16\nlearning_rate = 1e308\n").unwrap();
    let err = fails_with(
        &["train", "--dataset", s(&repo("fixtures/loss64.csv")), "--config", s(&cfg), "--out", s(&dir.path().join("m.json"))],
        3,
    );
    assert!(err.contains("epoch") && err.contains("batch"), "{err}");
}

#[test]
fn golden_report_matches() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    ok(&["evaluate", "--scores", s(&repo("fixtures/table3_cmac.csv")), "--out", s(&out)]);
    assert_eq!(read(&out), read(&repo("fixtures/golden/table3_cmac_report.json")));
}

#[test]
fn report_round_trips_byte_identically() {
    let text = read(&repo("fixtures/golden/table3_cmac_report.json"));
    let r = FairnessReport::from_json(&text).unwrap();
    assert_eq!(r.to_json().unwrap(), text);
}

#[test]
fn zone_flag_is_echoed_and_plot_data_written() {
    let dir = tempfile::tempdir().unwrap();
    let (out, kde, bars) = (dir.path().join("r.json"), dir.path().join("k.csv"), dir.path().join("b.csv"));
    ok(&[
        "evaluate",
        "--scores",
        s(&repo("fixtures/table5_erm.csv")),
        "--out",
        s(&out),
        "--zone",
        "0.3,0.7",
        "--kde-out",
        s(&kde),
        "--bars-out",
        s(&bars),
    ]);
    let r = json(&out);
    assert_eq!(r["config"]["zone"][0].as_f64(), Some(0.3));
    assert_eq!(r["config"]["zone"][1].as_f64(), Some(0.7));

    let k = read(&kde);
    assert_eq!(k.lines().next(), Some("subgroup,x,density"));
    assert_eq!(k.lines().count(), 1 + 8 * 201);
    assert_eq!(read(&bars).lines().next(), Some("subgroup,metric,value,lo,hi"));
}

#[test]
fn bootstrap_attaches_an_interval_to_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    let (out, bars) = (dir.path().join("r.json"), dir.path().join("b.csv"));
    ok(&[
        "evaluate",
        "--scores",
        s(&repo("fixtures/table3_erm.csv")),
        "--out",
        s(&out),
        "--bootstrap",
        "--resamples",
        "200",
        "--bars-out",
        s(&bars),
    ]);
    let text = read(&out);
    let r = FairnessReport::from_json(&text).unwrap();
    let metrics = cmac_core::report::numeric_metrics(&r);
    assert!(!metrics.is_empty());
    for (name, v) in metrics {
        let ci = r.intervals.get(&name).unwrap_or_else(|| panic!("no interval for {name}"));
        assert_eq!(ci.point, v);
        assert!(ci.lo <= ci.hi, "{name}");
    }
    assert_eq!(r.bootstrap.as_ref().unwrap().n_resamples, 200);
    assert!(read(&bars).lines().skip(1).all(|l| !l.ends_with(",,")));
}

#[test]
fn checkpoint_scoring_matches_scores_out() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.json");
    let data = repo("fixtures/loss64.csv");
    ok(&["train", "--dataset", s(&data), "--config", s(&repo("fixtures/loss64.toml")), "--out", s(&ck)]);
    let (r1, r2, scored) = (dir.path().join("r1.json"), dir.path().join("r2.json"), dir.path().join("s.csv"));
    ok(&["evaluate", "--checkpoint", s(&ck), "--dataset", s(&data), "--out", s(&r1), "--scores-out", s(&scored)]);
    ok(&["evaluate", "--scores", s(&scored), "--out", s(&r2)]);
    assert_eq!(read(&r1), read(&r2));
}

#[test]
fn compare_against_itself_is_null() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.json");
    let f = repo("fixtures/table5_erm.csv");
    ok(&["compare", "--a", s(&f), "--b", s(&f), "--out", s(&out)]);
    let c = json(&out);
    assert_eq!(c["auc"]["difference"].as_f64(), Some(0.0));
    assert_eq!(c["auc"]["delong"]["status"], "degenerate_variance");
    assert_eq!(c["impact_total"]["prevented"], 0);
}

#[test]
fn impact_tables_reproduce_published_totals() {
    let dir = tempfile::tempdir().unwrap();
    for (t, total) in [("table3", "18 (28.1%)"), ("table5", "28 (5.1%)")] {
        let out = dir.path().join(format!("{t}.json"));
        let printed = ok(&[
            "compare",
            "--a",
            s(&repo(&format!("fixtures/{t}_erm.csv"))),
            "--b",
            s(&repo(&format!("fixtures/{t}_cmac.csv"))),
            "--out",
            s(&out),
        ]);
        assert!(printed.ends_with(&format!("total\t{total}\n")), "{printed}");
        assert_eq!(json(&out)["impact_total"]["display"], total);
    }
}

#[test]
fn mismatched_ids_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b.csv");
    let text = read(&repo("fixtures/table3_cmac.csv"));
    let mut lines: Vec<&str> = text.lines().collect();
    lines.truncate(lines.len() - 15);
    std::fs::write(&b, lines.join("\n") + "\n").unwrap();
    let err = fails_with(
        &["compare", "--a", s(&repo("fixtures/table3_erm.csv")), "--b", s(&b), "--out", s(&dir.path().join("c.json"))],
        4,
    );
    assert!(err.contains("15 sample ids"), "{err}");
    assert!(err.contains("first 10: 1975, 1976"), "{err}");
}

fn small_experiment(dir: &Path, lambda: f64) -> PathBuf {
    let cfg = dir.join("exp.toml");
    let text = read(&repo("configs/derm6.toml"))
        .replace("epochs = 20", "epochs = 4")
        .replace("lambda_cmac = 0.5", &format!("lambda_cmac = {lambda:?}"))
        .replace("seeds = [1, 2, 3]", "seeds = [1, 2]")
        .replace("eval_draw_scale = 5", "eval_draw_scale = 1");
    std::fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn experiment_is_reproducible_and_lists_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_experiment(dir.path(), 0.5);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["experiment", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["experiment", "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(read(&a.join("summary.json")), read(&b.join("summary.json")));
    assert_eq!(read(&a.join("checkpoints/cmac_seed2.json")), read(&b.join("checkpoints/cmac_seed2.json")));

    let summary = json(&a.join("summary.json"));
    assert_eq!(summary["hard_subgroup"], "60+|male");
    for mode in ["erm", "cmac"] {
        let values = summary["modes"][mode]["aggregate.auc"]["values"].as_array().unwrap();
        assert_eq!(values.len(), 2);
        for seed in [1, 2] {
            assert!(a.join(format!("reports/{mode}_seed{seed}.json")).exists());
        }
    }
    assert_eq!(summary["paired"].as_array().unwrap().len(), 2);
    assert!(a.join("comparisons/seed1.json").exists());
    assert!(read(&a.join("summary.csv")).starts_with("mode,metric,mean,ci_lo,ci_hi\n"));
}

#[test]
fn experiment_at_zero_lambda_has_identical_arms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_experiment(dir.path(), 0.0);
    let out = dir.path().join("x");
    ok(&["experiment", "--config", s(&cfg), "--out", s(&out)]);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["modes"]["erm"], summary["modes"]["cmac"]);
    for seed in [1, 2] {
        let f = |m: &str, kind: &str, ext: &str| read(&out.join(format!("{kind}/{m}_seed{seed}.{ext}")));
        assert_eq!(f("erm", "checkpoints", "json"), f("cmac", "checkpoints", "json"));
        assert_eq!(f("erm", "reports", "json"), f("cmac", "reports", "json"));
    }
}

#[test]
fn experiment_without_cohort_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nepochs = 1\n").unwrap();
    let err = fails_with(&["experiment", "--config", s(&cfg), "--out", s(&dir.path().join("o"))], 2);
    assert!(err.contains("[cohort]"), "{err}");
}
