//! Shared fixtures for the benchmarks: deterministic synthetic genotype
//! tables and an oracle that knows their planted variants.

use std::collections::HashMap;

use genofeat::harness::{generate_synthetic, SyntheticSpec, SyntheticTruth};
use genofeat::llm::{oracle_provider, OracleProvider};
use genofeat::{GenotypeDataset, LabeledMatrix};

/// Planted-signal table with `n` samples and `d` variants.
pub fn synthetic(n: usize, d: usize, seed: u64) -> (GenotypeDataset, SyntheticTruth) {
    generate_synthetic(&SyntheticSpec {
        n_samples: n,
        n_variants: d,
        seed,
        ..Default::default()
    })
    .expect("valid synthetic spec")
}

/// Real-valued matrix of the first `rows` samples.
pub fn matrix(n: usize, d: usize, rows: usize, seed: u64) -> LabeledMatrix {
    let (ds, _) = synthetic(n, d, seed);
    let idx: Vec<usize> = (0..rows.min(n)).collect();
    ds.subset_rows(&idx).to_matrix()
}

/// Oracle provider scoring variants by the planted ground truth.
pub fn oracle(truth: &SyntheticTruth, temperature: Option<f64>) -> OracleProvider {
    let scores: HashMap<String, f64> = truth.scores.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let p = oracle_provider(scores, 0)
        .expect("non-empty scores")
        .with_interactions(truth.interactions.clone());
    match temperature {
        Some(t) => p.with_temperature(t),
        None => p,
    }
}

/// Deterministic scores with ties and binary labels for AUROC timing.
pub fn scored_labels(n: usize) -> (Vec<f64>, Vec<bool>) {
    let scores = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    let labels = (0..n).map(|i| (i * 31) % 3 == 0).collect();
    (scores, labels)
}
