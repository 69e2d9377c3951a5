use std::collections::HashMap;
use std::sync::Arc;

use super::config::{ExperimentConfig, ProviderSettings};
use super::synthetic::SyntheticTruth;
use super::HarnessError;
use crate::llm::{oracle_provider, ChatClient, LlmProvider, ProviderConfig, RecordingProvider, ReplayProvider};

/// Instantiates the configured provider. Live providers (oracle or HTTP) are
/// wrapped in a recorder when `cfg.cache` is set.
///
/// An oracle without explicit scores falls back to the ground truth of a
/// synthetic dataset.
pub fn build_provider(
    cfg: &ExperimentConfig,
    truth: Option<&SyntheticTruth>,
) -> Result<Arc<dyn LlmProvider>, HarnessError> {
    let live: Arc<dyn LlmProvider> = match &cfg.provider {
        ProviderSettings::Replay(r) => {
            if !r.cache.exists() {
                return Err(HarnessError::Config(format!(
                    "replay cache {} does not exist",
                    r.cache.display()
                )));
            }
            let mut p = ReplayProvider::open(&r.cache)?.with_namespaces(&r.reasoning_namespace, &r.routine_namespace);
            if r.lenient {
                p = p.lenient();
            }
            return Ok(Arc::new(p));
        }
        ProviderSettings::Oracle(o) => {
            let scores: HashMap<String, f64> = match (&o.scores, truth) {
                (Some(s), _) => s.iter().map(|(k, v)| (k.clone(), *v)).collect(),
                (None, Some(t)) => t.scores.iter().map(|(k, v)| (k.clone(), *v)).collect(),
                (None, None) => {
                    return Err(HarnessError::Config(
                        "the oracle provider needs relevance scores for a non-synthetic dataset".into(),
                    ))
                }
            };
            let interactions = o
                .interactions
                .clone()
                .or_else(|| truth.map(|t| t.interactions.clone()))
                .unwrap_or_default();
            let mut p = oracle_provider(scores, o.seed)
                .map_err(|e| HarnessError::Config(e.to_string()))?
                .with_thresholds(o.lenient_threshold, o.strict_threshold)
                .with_interactions(interactions)
                .with_max_features(o.max_features);
            if let Some(t) = o.temperature {
                p = p.with_temperature(t);
            }
            Arc::new(p)
        }
        ProviderSettings::Openai(o) => {
            let key = std::env::var(&o.api_key_env)
                .map_err(|_| HarnessError::Config(format!("environment variable {} is not set", o.api_key_env)))?;
            let mut pc = ProviderConfig::new(&o.endpoint, &o.model_id, key);
            pc.routine_model_id = o.routine_model_id.clone();
            pc.timeout_secs = o.timeout_secs;
            pc.max_retries = o.max_retries;
            Arc::new(ChatClient::new(pc).map_err(|e| HarnessError::Config(e.to_string()))?)
        }
    };
    match &cfg.cache {
        Some(path) => Ok(Arc::new(RecordingProvider::open(live, path)?)),
        None => Ok(live),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{OpenAiSettings, OracleSettings, ReplaySettings};
    use crate::llm::{PromptRequest, PromptTag};

    #[test]
    fn oracle_needs_scores_without_truth() {
        let cfg = ExperimentConfig::default();
        assert!(matches!(build_provider(&cfg, None), Err(HarnessError::Config(_))));
    }

    #[test]
    fn explicit_scores_win() {
        let cfg = ExperimentConfig {
            provider: ProviderSettings::Oracle(OracleSettings {
                scores: Some([("rsA".to_string(), 9.0), ("rsB".to_string(), 1.0)].into()),
                ..Default::default()
            }),
            ..Default::default()
        };
        let p = build_provider(&cfg, None).unwrap();
        let req = PromptRequest::new(PromptTag::Nominate, "Number to select: 1");
        assert!(p.complete(&req).unwrap().text.ends_with("rsA"));
    }

    #[test]
    fn missing_replay_cache_and_key_are_config_errors() {
        let cfg = ExperimentConfig {
            provider: ProviderSettings::Replay(ReplaySettings {
                cache: "/nonexistent/cache.jsonl".into(),
                ..Default::default()
            }),
            ..Default::default()
        };
        assert!(matches!(build_provider(&cfg, None), Err(HarnessError::Config(_))));
        let cfg = ExperimentConfig {
            provider: ProviderSettings::Openai(OpenAiSettings {
                api_key_env: "GENOFEAT_TEST_UNSET_KEY".into(),
                ..Default::default()
            }),
            ..Default::default()
        };
        assert!(matches!(build_provider(&cfg, None), Err(HarnessError::Config(_))));
    }

    #[test]
    fn recording_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("c.jsonl");
        let live = ExperimentConfig {
            provider: ProviderSettings::Oracle(OracleSettings {
                scores: Some([("rsA".to_string(), 9.0)].into()),
                ..Default::default()
            }),
            cache: Some(cache.clone()),
            ..Default::default()
        };
        let req = PromptRequest::new(PromptTag::Nominate, "Number to select: 1");
        let first = build_provider(&live, None).unwrap().complete(&req).unwrap().text;
        let replay = ExperimentConfig {
            provider: live.provider.replay_of(cache),
            ..Default::default()
        };
        assert_eq!(
            build_provider(&replay, None).unwrap().complete(&req).unwrap().text,
            first
        );
    }
}
