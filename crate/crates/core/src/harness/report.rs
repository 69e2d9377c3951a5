use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode};
use super::nominate::Nomination;
use super::HarnessError;

pub const CSV_HEADER: [&str; 5] = ["method", "shots", "repeat", "classifier", "auroc"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub method: String,
    pub shots: usize,
    pub repeat: usize,
    pub classifier: String,
    pub auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub shots: usize,
    pub classifier: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent with a single repeat.
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionArtifact {
    pub method: String,
    /// `None` for data-independent selections shared by every split.
    pub shots: Option<usize>,
    pub repeat: Option<usize>,
    pub selected: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetArtifact {
    pub shots: usize,
    pub repeat: usize,
    pub member: usize,
    /// `(name, canonical expression)` pairs.
    pub features: Vec<(String, String)>,
    pub example_indices: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub selections: Vec<SelectionArtifact>,
    pub feature_sets: Vec<FeatureSetArtifact>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nomination: Option<Nomination>,
    /// Model files relative to the output directory.
    pub model_files: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSeed {
    pub shots: usize,
    pub repeat: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheProvenance {
    pub path: String,
    /// SHA-256 of the cache file when the run started, if it existed.
    pub sha256: Option<String>,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    pub seed: u64,
    pub task_seeds: Vec<TaskSeed>,
    pub dataset_sha256: String,
    pub cache: Option<CacheProvenance>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub rows: Vec<ScoreRow>,
    pub summary: Vec<SummaryRow>,
    pub artifacts: Artifacts,
    pub provenance: Provenance,
}

/// Mean and sample standard deviation (n − 1 denominator).
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    (mean, std)
}

/// Groups rows by (method, shots, classifier) in first-appearance order.
pub fn summarize(rows: &[ScoreRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, usize, String)> = Vec::new();
    let mut groups: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.shots, r.classifier.clone());
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(r.auroc);
    }
    order
        .into_iter()
        .map(|key| {
            let values = &groups[&key];
            let (mean, std) = mean_std(values);
            SummaryRow {
                method: key.0,
                shots: key.1,
                classifier: key.2,
                n: values.len(),
                mean,
                std,
            }
        })
        .collect()
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Data(format!("report: {e}")))
    }

    /// Flat per-row table for plotting.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.method.as_str(),
                &r.shots.to_string(),
                &r.repeat.to_string(),
                r.classifier.as_str(),
                &r.auroc.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Mean AUROC of one (method, shots, classifier) cell.
    pub fn mean(&self, method: &str, shots: usize, classifier: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.shots == shots && s.classifier == classifier)
            .map(|s| s.mean)
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&json, self.to_json()).map_err(|e| HarnessError::io(&json, e))?;
        std::fs::write(&csv, self.to_csv()).map_err(|e| HarnessError::io(&csv, e))?;
        Ok((json, csv))
    }
}
