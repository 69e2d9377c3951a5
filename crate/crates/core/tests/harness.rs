use std::collections::BTreeSet;

use genofeat::harness::{
    generate_synthetic, load_experiment_data, mean_std, run_engineering, run_experiment, run_selection_compare,
    split_rows, DatasetSource, ExperimentConfig, ExperimentData, HarnessError, Method, Mode, RunReport, SyntheticSpec,
    CSV_HEADER, ENSEMBLE, RAW, SINGLE,
};
use genofeat::llm::MockProvider;
use genofeat::models::ClassifierKind;
use genofeat::EngineeringConfig;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_samples: 240,
        n_variants: 150,
        ..Default::default()
    }
}

fn small_cfg(mode: Mode) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Synthetic(small_spec()),
        mode,
        shot_counts: vec![10, 20],
        repeats: 2,
        ..Default::default()
    }
}

#[test]
fn one_row_per_method_shot_repeat_and_classifier() {
    let cfg = small_cfg(Mode::SelectCompare);
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(
        report.rows.len(),
        cfg.methods.len() * cfg.shot_counts.len() * cfg.repeats * cfg.classifiers.len()
    );
    for r in &report.rows {
        assert!((0.0..=1.0).contains(&r.auroc), "{r:?}");
    }

    // Summary statistics recomputed from the rows.
    for s in &report.summary {
        let values: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.method == s.method && r.shots == s.shots && r.classifier == s.classifier)
            .map(|r| r.auroc)
            .collect();
        assert_eq!(values.len(), s.n);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.std.unwrap() - var.sqrt()).abs() < 1e-12);
    }

    let csv = report.to_csv();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(csv.lines().count(), report.rows.len() + 1);
    assert_eq!(RunReport::from_json(&report.to_json()).unwrap(), report);
}

#[test]
fn splits_are_disjoint_and_cover_every_row() {
    let (ds, _) = generate_synthetic(&small_spec()).unwrap();
    for shots in [2, 10, 64, 239] {
        for seed in 0..5 {
            let split = split_rows(&ds, shots, seed).unwrap();
            assert_eq!(split.train.len(), shots);
            let train: BTreeSet<usize> = split.train.iter().copied().collect();
            let test: BTreeSet<usize> = split.test.iter().copied().collect();
            assert_eq!(train.len(), shots);
            assert!(train.is_disjoint(&test));
            assert_eq!(train.len() + test.len(), ds.n_samples());
        }
    }
    assert!(split_rows(&ds, ds.n_samples(), 0).is_err());
}

#[test]
fn oracle_selection_beats_random_with_few_shots() {
    let cfg = ExperimentConfig {
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            n_samples: 600,
            n_variants: 300,
            ..Default::default()
        }),
        shot_counts: vec![10],
        repeats: 5,
        methods: vec![Method::Hierarchical, Method::Random],
        classifiers: vec![ClassifierKind::Logistic],
        ..Default::default()
    };
    let report = run_experiment(&cfg).unwrap();
    let oracle = report.mean("hierarchical", 10, "logistic").unwrap();
    let random = report.mean("random", 10, "logistic").unwrap();
    assert!(oracle - random > 0.1, "oracle {oracle:.3} vs random {random:.3}");
}

#[test]
fn same_seed_same_report() {
    let cfg = ExperimentConfig {
        methods: vec![
            Method::Sequential,
            Method::Lasso,
            Method::Pca,
            Method::Gini,
            Method::Random,
        ],
        workers: 2,
        ..small_cfg(Mode::SelectCompare)
    };
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&ExperimentConfig { workers: 1, ..cfg }).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.artifacts, b.artifacts);
}

fn engineering_cfg(k: usize) -> ExperimentConfig {
    ExperimentConfig {
        shot_counts: vec![16],
        repeats: 2,
        engineering: EngineeringConfig {
            k,
            ..Default::default()
        },
        ..small_cfg(Mode::Engineer)
    }
}

#[test]
fn single_member_ensemble_equals_that_member() {
    let report = run_experiment(&engineering_cfg(1)).unwrap();
    assert_eq!(report.rows.len(), 3 * 2 * 2);
    for clf in ["logistic", "forest"] {
        for rep in 0..2 {
            let get = |m: &str| {
                report
                    .rows
                    .iter()
                    .find(|r| r.method == m && r.repeat == rep && r.classifier == clf)
                    .unwrap()
                    .auroc
            };
            assert_eq!(get(ENSEMBLE), get(SINGLE));
        }
    }
    assert_eq!(report.artifacts.feature_sets.len(), 2);
}

#[test]
fn unusable_engineering_output_reduces_to_raw_features() {
    let cfg = ExperimentConfig {
        engineering_features: Some((0..6).map(genofeat::harness::variant_name).collect()),
        ..engineering_cfg(3)
    };
    let data = load_experiment_data(&cfg).unwrap();
    let llm = MockProvider::constant("I would rather not propose anything today.");
    let report = run_engineering(&cfg, &data, &llm).unwrap();
    assert!(report.artifacts.feature_sets.iter().all(|f| f.features.is_empty()));
    assert!(report
        .artifacts
        .warnings
        .iter()
        .any(|w| w.contains("every feature set is empty")));
    for clf in ["logistic", "forest"] {
        for rep in 0..2 {
            let get = |m: &str| {
                report
                    .rows
                    .iter()
                    .find(|r| r.method == m && r.repeat == rep && r.classifier == clf)
                    .unwrap()
                    .auroc
            };
            assert_eq!(get(ENSEMBLE), get(RAW));
            assert_eq!(get(SINGLE), get(RAW));
        }
    }
}

#[test]
fn failing_task_flushes_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        shot_counts: vec![10, 240],
        repeats: 1,
        methods: vec![Method::Lasso],
        classifiers: vec![ClassifierKind::Logistic],
        output_dir: Some(dir.path().to_path_buf()),
        ..small_cfg(Mode::SelectCompare)
    };
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, HarnessError::Data(_)), "{err}");
    let text = std::fs::read_to_string(dir.path().join("partial_report.json")).unwrap();
    let partial = RunReport::from_json(&text).unwrap();
    assert_eq!(partial.rows.len(), 1);
    assert_eq!(partial.rows[0].shots, 10);
    assert!(dir.path().join("partial_report.csv").exists());
}

#[test]
fn nomination_mode_reports_nominated_and_baselines() {
    let cfg = ExperimentConfig {
        methods: vec![Method::Lasso, Method::Random],
        classifiers: vec![ClassifierKind::Logistic],
        phenotype: "synthetic trait".into(),
        ..small_cfg(Mode::Nominate)
    };
    let report = run_experiment(&cfg).unwrap();
    let nomination = report.artifacts.nomination.as_ref().unwrap();
    assert_eq!(nomination.nominated.len(), cfg.nominate_n);
    assert!(nomination.novel.is_empty());
    let methods: BTreeSet<&str> = report.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["lasso", "nominated", "random"].into_iter().collect());
    assert_eq!(report.rows.len(), 3 * 2 * 2);
}

#[test]
fn scripted_provider_drives_selection_compare() {
    let cfg = ExperimentConfig {
        methods: vec![Method::Hierarchical],
        classifiers: vec![ClassifierKind::Logistic],
        ..small_cfg(Mode::SelectCompare)
    };
    let (ds, _) = generate_synthetic(&small_spec()).unwrap();
    let data = ExperimentData::from_dataset(ds, None);
    let llm = MockProvider::constant("no list here");
    let err = run_selection_compare(&cfg, &data, &llm).unwrap_err();
    assert!(matches!(err, HarnessError::Selection(_)), "{err}");
}

#[test]
fn sample_std_of_known_values() {
    let (mean, std) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(mean, 2.5);
    assert!((std.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
}
