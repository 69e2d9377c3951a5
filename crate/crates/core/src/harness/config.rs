use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticSpec;
use super::HarnessError;
use crate::engineering::EngineeringConfig;
use crate::models::{ClassifierKind, SearchGrid};
use crate::selection::SelectionConfig;

/// Default shot sweep for the multi-class ancestry setting.
pub const ANCESTRY_SHOTS: [usize; 6] = [10, 20, 40, 80, 160, 320];
/// Default shot sweep for the binary hearing-loss setting.
pub const HEARING_SHOTS: [usize; 5] = [8, 16, 32, 64, 128];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    SelectCompare,
    Engineer,
    Nominate,
    FullPipeline,
}

/// A way of choosing `d'` variants to train on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hierarchical,
    Sequential,
    /// Variants nominated by the model from the phenotype name alone.
    Nominated,
    Lasso,
    Pca,
    Gini,
    /// `d'` variants drawn uniformly per split.
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Hierarchical => "hierarchical",
            Method::Sequential => "sequential",
            Method::Nominated => "nominated",
            Method::Lasso => "lasso",
            Method::Pca => "pca",
            Method::Gini => "gini",
            Method::Random => "random",
        }
    }

    /// Knowledge-driven methods never look at data rows, so one selection
    /// serves every split.
    pub fn is_llm(self) -> bool {
        matches!(self, Method::Hierarchical | Method::Sequential | Method::Nominated)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
        /// Optional two-column variant → gene CSV used to annotate prompts.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gene_map: Option<PathBuf>,
    },
    Synthetic(SyntheticSpec),
}

fn default_label_column() -> String {
    "label".into()
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    /// Relevance score per variant. When absent and the dataset is
    /// synthetic, the planted ground truth is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    /// Overrides every request temperature; `0.0` gives a noiseless oracle.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Interacting pairs proposed as products. Defaults to the planted pairs
    /// of a synthetic dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interactions: Option<Vec<(String, String)>>,
    pub max_features: usize,
    pub lenient_threshold: f64,
    pub strict_threshold: f64,
    pub seed: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            scores: None,
            temperature: None,
            interactions: None,
            max_features: 4,
            lenient_threshold: 5.0,
            strict_threshold: 7.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpenAiSettings {
    pub endpoint: String,
    pub model_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub routine_model_id: Option<String>,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
}

impl Default for OpenAiSettings {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_id: "gpt-4o".into(),
            routine_model_id: Some("gpt-4o-mini".into()),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120.0,
            max_retries: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySettings {
    pub cache: PathBuf,
    /// Must match the model identities of the recording run.
    pub reasoning_namespace: String,
    pub routine_namespace: String,
    /// Answer cache misses with empty text instead of failing.
    pub lenient: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSettings {
    Oracle(OracleSettings),
    Openai(OpenAiSettings),
    Replay(ReplaySettings),
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings::Oracle(OracleSettings::default())
    }
}

impl ProviderSettings {
    /// Replay settings that hit the keys a recording by `self` would write.
    pub fn replay_of(&self, cache: PathBuf) -> ProviderSettings {
        let (reasoning, routine) = match self {
            ProviderSettings::Openai(o) => (
                o.model_id.clone(),
                o.routine_model_id.clone().unwrap_or_else(|| o.model_id.clone()),
            ),
            ProviderSettings::Replay(r) => (r.reasoning_namespace.clone(), r.routine_namespace.clone()),
            ProviderSettings::Oracle(_) => (String::new(), String::new()),
        };
        ProviderSettings::Replay(ReplaySettings {
            cache,
            reasoning_namespace: reasoning,
            routine_namespace: routine,
            lenient: false,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub mode: Mode,
    /// Training-set sizes, strictly ascending.
    pub shot_counts: Vec<usize>,
    pub repeats: usize,
    /// Master seed; every split, model and prompt seed derives from it.
    pub seed: u64,
    /// Concurrent (shots, repeat) tasks; `0` uses every available core.
    pub workers: usize,
    pub methods: Vec<Method>,
    pub classifiers: Vec<ClassifierKind>,
    pub grid: SearchGrid,
    pub cv_folds: usize,
    /// Run the relevance filter before knowledge-driven selection.
    pub prefilter: bool,
    /// Base variants for engineering. When absent, hierarchical selection
    /// chooses them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engineering_features: Option<Vec<String>>,
    pub phenotype: String,
    pub nominate_n: usize,
    pub provider: ProviderSettings,
    /// JSONL file recording every live provider response.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    pub selection: SelectionConfig,
    pub engineering: EngineeringConfig,
    /// Where partial results go if a run fails, and where model files are
    /// written when `save_models` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub save_models: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            mode: Mode::default(),
            shot_counts: ANCESTRY_SHOTS.to_vec(),
            repeats: 5,
            seed: 0,
            workers: 0,
            methods: vec![
                Method::Hierarchical,
                Method::Sequential,
                Method::Lasso,
                Method::Pca,
                Method::Gini,
                Method::Random,
            ],
            classifiers: vec![ClassifierKind::Logistic, ClassifierKind::Forest],
            grid: SearchGrid::default(),
            cv_folds: 4,
            prefilter: false,
            engineering_features: None,
            phenotype: "the phenotype".into(),
            nominate_n: 15,
            provider: ProviderSettings::default(),
            cache: None,
            selection: SelectionConfig::default(),
            engineering: EngineeringConfig::default(),
            output_dir: None,
            save_models: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.shot_counts.is_empty() {
            return bad("shot_counts is empty".into());
        }
        if self.shot_counts.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "shot_counts must be strictly ascending, got {:?}",
                self.shot_counts
            ));
        }
        if self.shot_counts[0] == 0 {
            return bad("shot counts must be positive".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.cv_folds < 2 {
            return bad(format!("cv_folds must be at least 2, got {}", self.cv_folds));
        }
        if self.classifiers.is_empty() {
            return bad("no classifiers configured".into());
        }
        if matches!(self.mode, Mode::SelectCompare | Mode::FullPipeline) && self.methods.is_empty() {
            return bad("no selection methods configured".into());
        }
        if self.nominate_n == 0 {
            return bad("nominate_n must be at least 1".into());
        }
        if self.grid.logistic_l2.is_empty() || self.grid.forest_depths.is_empty() || self.grid.forest_trees == 0 {
            return bad("hyperparameter grid has an empty axis".into());
        }
        self.selection
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.engineering
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let ProviderSettings::Oracle(o) = &self.provider {
            if let Some(t) = o.temperature {
                if !(0.0..=2.0).contains(&t) {
                    return bad(format!("oracle temperature {t} outside [0, 2]"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"mode": "engineer", "shot_counts": [8, 16], "provider": {"kind": "replay", "cache": "c.jsonl"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::Engineer);
        assert_eq!(cfg.repeats, 5);
        assert!(matches!(cfg.provider, ProviderSettings::Replay(ref r) if r.cache == Path::new("c.jsonl")));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_json(r#"{"shots": [1]}"#).is_err());
        let mut cfg = ExperimentConfig {
            shot_counts: vec![16, 8],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.shot_counts = vec![8, 16];
        cfg.repeats = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn replay_namespaces_follow_live_models() {
        let live = ProviderSettings::Openai(OpenAiSettings::default());
        match live.replay_of("c.jsonl".into()) {
            ProviderSettings::Replay(r) => {
                assert_eq!(r.reasoning_namespace, "gpt-4o");
                assert_eq!(r.routine_namespace, "gpt-4o-mini");
            }
            other => panic!("{other:?}"),
        }
    }
}
