use std::path::{Path, PathBuf};

use genofeat::harness::{DatasetSource, ExperimentConfig, RunReport, SyntheticSpec};
use genofeat::models::ClassifierKind;
use genofeat_cli::cli;

fn run(args: &[&str]) -> i32 {
    cli(std::iter::once("genofeat").chain(args.iter().copied()))
}

fn small_config(dir: &Path) -> PathBuf {
    let cfg = ExperimentConfig {
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            n_samples: 200,
            n_variants: 100,
            ..Default::default()
        }),
        shot_counts: vec![10],
        repeats: 2,
        classifiers: vec![ClassifierKind::Logistic],
        ..Default::default()
    };
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(dir: &Path) -> RunReport {
    RunReport::from_json(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["select", "--no-such-flag"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["select", "--strategy", "astrology"]), 2);
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"repeats": 2, "unknown_key": true}"#).unwrap();
    assert_eq!(run(&["select", "--config", s(&cfg)]), 2);
    assert_eq!(run(&["select", "--config", s(&dir.path().join("missing.json"))]), 2);
    let good = small_config(dir.path());
    assert_eq!(run(&["select", "--config", s(&good), "--shots", "20,10"]), 2);
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    assert_eq!(run(&["select", "--data", s(&missing), "--strategy", "lasso"]), 3);
}

#[test]
fn empty_replay_cache_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cache = dir.path().join("empty.jsonl");
    std::fs::write(&cache, "").unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        run(&["replay", "--config", s(&cfg), "--cache", s(&cache), "-o", s(&out)]),
        4
    );
}

#[test]
fn select_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let code = run(&[
        "select",
        "--config",
        s(&cfg),
        "--strategy",
        "hierarchical,lasso",
        "--d-prime",
        "15",
        "-o",
        s(&out),
    ]);
    assert_eq!(code, 0);
    let r = report(&out);
    assert_eq!(r.rows.len(), 2 * 2);
    assert_eq!(r.provenance.config.selection.d_prime, 15);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("method,shots,repeat,classifier,auroc\n"));
}

#[test]
fn recorded_run_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cache = dir.path().join("cache.jsonl");
    let live = dir.path().join("live");
    assert_eq!(
        run(&["select", "--config", s(&cfg), "--cache", s(&cache), "-o", s(&live)]),
        0
    );
    // The output directory is part of the recorded config, so both replays
    // write to the same place.
    let out = dir.path().join("replay");
    let mut outputs = Vec::new();
    for _ in 0..2 {
        assert_eq!(
            run(&["replay", "--config", s(&cfg), "--cache", s(&cache), "-o", s(&out)]),
            0
        );
        outputs.push(std::fs::read_to_string(out.join("report.json")).unwrap());
    }
    assert!(outputs[0] == outputs[1], "replayed reports differ");
    assert_eq!(
        std::fs::read_to_string(live.join("report.csv")).unwrap(),
        std::fs::read_to_string(out.join("report.csv")).unwrap()
    );
}

#[test]
fn engineer_and_nominate_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("eng");
    assert_eq!(
        run(&[
            "evaluate",
            "--config",
            s(&cfg),
            "--mode",
            "engineer",
            "--k",
            "3",
            "--shots",
            "16",
            "-o",
            s(&out)
        ]),
        0
    );
    let r = report(&out);
    assert_eq!(r.provenance.config.engineering.k, 3);
    assert_eq!(r.artifacts.feature_sets.len(), 2 * 3);

    let out = dir.path().join("nom");
    assert_eq!(
        run(&[
            "nominate",
            "--config",
            s(&cfg),
            "--phenotype",
            "trait",
            "--n",
            "10",
            "-o",
            s(&out)
        ]),
        0
    );
    let r = report(&out);
    assert_eq!(r.artifacts.nomination.unwrap().nominated.len(), 10);
}

#[test]
fn synth_writes_dataset_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data").join("synthetic.csv");
    assert_eq!(
        run(&[
            "synth",
            "--out",
            s(&csv),
            "--samples",
            "50",
            "--variants",
            "40",
            "--seed",
            "3"
        ]),
        0
    );
    let ds = genofeat::dataset::load_dataset(&csv, "label").unwrap();
    assert_eq!((ds.n_samples(), ds.n_variants()), (50, 40));
    assert!(dir.path().join("data").join("synthetic.truth.json").exists());
    // An oracle has no relevance scores for a plain CSV.
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "select",
            "--data",
            s(&csv),
            "--shots",
            "10",
            "--repeats",
            "1",
            "-o",
            s(&out)
        ]),
        2
    );
}
