//! Language-model round trips.
//!
//! [`LlmProvider`] is the single seam between the pipeline and a model. The
//! implementations are:
//!
//! - [`ChatClient`]: OpenAI-compatible chat completions over HTTP(S), with
//!   exponential-backoff retries
//! - [`RecordingProvider`] / [`ReplayProvider`]: append-only JSONL cache keyed by
//!   a canonical request hash
//! - [`MockProvider`]: scripted responses for unit tests
//! - [`OracleProvider`]: answers from a known relevance-score table, so
//!   selection and engineering can be checked against ground truth offline

mod cache;
mod client;
mod mock;
mod oracle;
pub mod protocol;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{replay_provider, CacheRecord, RecordingProvider, ReplayProvider};
pub use client::{complete, ChatClient, HttpReply, ProviderConfig, Transport, UreqTransport};
pub use mock::MockProvider;
pub use oracle::{oracle_provider, OracleProvider};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("provider rejected request (HTTP {status}): {message}")]
    ProviderRejected { status: u16, message: String },
    #[error("no cached response for {tag:?} request {hash}")]
    CacheMiss { hash: String, tag: PromptTag },
    #[error("corrupt cache at line {line}: {message}")]
    CorruptCache { line: usize, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Which pipeline step issued a request. Also decides the model tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTag {
    Filter,
    Select,
    SelectFinal,
    Engineer,
    Parse,
    FunctionWrite,
    Nominate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTier {
    /// Selection, engineering and nomination.
    Reasoning,
    /// Parsing and expression rewriting.
    Routine,
}

impl PromptTag {
    pub fn tier(self) -> ModelTier {
        match self {
            PromptTag::Parse | PromptTag::FunctionWrite => ModelTier::Routine,
            _ => ModelTier::Reasoning,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_hint: Option<u64>,
    pub tag: PromptTag,
}

impl PromptRequest {
    pub fn new(tag: PromptTag, user_text: impl Into<String>) -> Self {
        Self {
            system_text: String::new(),
            user_text: user_text.into(),
            temperature: 0.0,
            seed_hint: None,
            tag,
        }
    }

    pub fn with_system(mut self, system_text: impl Into<String>) -> Self {
        self.system_text = system_text.into();
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed_hint(mut self, seed: u64) -> Self {
        self.seed_hint = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.user_text.trim().is_empty() {
            return Err(LlmError::InvalidRequest("user_text is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Cache key: SHA-256 over the tag, sampling parameters, `namespace`
    /// (typically the model id) and the canonicalized texts.
    pub fn cache_key(&self, namespace: &str) -> String {
        let mut h = Sha256::new();
        for part in [
            namespace,
            &format!("{:?}", self.tag),
            &format!("{}", self.temperature),
            &self.seed_hint.map(|s| s.to_string()).unwrap_or_default(),
            &canonicalize(&self.system_text),
            &canonicalize(&self.user_text),
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Collapses every whitespace run outside fenced (```) blocks to one space.
/// Fenced blocks are kept byte for byte, since they carry serialized examples.
pub fn canonicalize(text: &str) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut outside: Vec<&str> = Vec::new();
    let mut in_block = false;
    for line in text.lines() {
        let is_fence = line.trim_start().starts_with("```");
        if in_block {
            if is_fence {
                out.push(line.trim().to_string());
                in_block = false;
            } else {
                out.push(line.to_string());
            }
        } else if is_fence {
            if !outside.is_empty() {
                out.push(outside.join(" "));
                outside.clear();
            }
            out.push(line.trim().to_string());
            in_block = true;
        } else {
            outside.extend(line.split_whitespace());
        }
    }
    if !outside.is_empty() {
        out.push(outside.join(" "));
    }
    out.join("\n")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub cached: bool,
}

impl CompletionResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: Usage::default(),
            cached: false,
        }
    }
}

/// One chat completion per call. Implementations must be usable from many
/// threads at once.
pub trait LlmProvider: Send + Sync {
    fn complete(&self, req: &PromptRequest) -> Result<CompletionResponse, LlmError>;

    /// Namespace mixed into cache keys, usually the model identity.
    fn namespace(&self, _tier: ModelTier) -> String {
        String::new()
    }
}

impl<P: LlmProvider + ?Sized> LlmProvider for &P {
    fn complete(&self, req: &PromptRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(req)
    }
    fn namespace(&self, tier: ModelTier) -> String {
        (**self).namespace(tier)
    }
}

impl<P: LlmProvider + ?Sized> LlmProvider for Box<P> {
    fn complete(&self, req: &PromptRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(req)
    }
    fn namespace(&self, tier: ModelTier) -> String {
        (**self).namespace(tier)
    }
}

impl<P: LlmProvider + ?Sized> LlmProvider for Arc<P> {
    fn complete(&self, req: &PromptRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(req)
    }
    fn namespace(&self, tier: ModelTier) -> String {
        (**self).namespace(tier)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tiers() {
        assert_eq!(PromptTag::Parse.tier(), ModelTier::Routine);
        assert_eq!(PromptTag::FunctionWrite.tier(), ModelTier::Routine);
        assert_eq!(PromptTag::Engineer.tier(), ModelTier::Reasoning);
        assert_eq!(PromptTag::SelectFinal.tier(), ModelTier::Reasoning);
    }

    #[test]
    fn validation() {
        assert!(PromptRequest::new(PromptTag::Filter, "  ").validate().is_err());
        assert!(PromptRequest::new(PromptTag::Filter, "x")
            .with_temperature(2.5)
            .validate()
            .is_err());
        assert!(PromptRequest::new(PromptTag::Filter, "x")
            .with_temperature(1.0)
            .validate()
            .is_ok());
    }

    #[test]
    fn fenced_blocks_are_preserved() {
        let a = "Examples:\n```\nrs1 is 0.  Answer: A\n```\nThanks";
        let b = "Examples:   \n\n```\nrs1 is 0.  Answer: A\n```\n   Thanks  ";
        let c = "Examples:\n```\nrs1 is 0. Answer: A\n```\nThanks";
        assert_eq!(canonicalize(a), canonicalize(b));
        assert_ne!(canonicalize(a), canonicalize(c));
    }

    #[test]
    fn key_depends_on_parameters() {
        let r = PromptRequest::new(PromptTag::Select, "pick");
        assert_ne!(r.cache_key(""), r.clone().with_temperature(0.3).cache_key(""));
        assert_ne!(r.cache_key(""), r.clone().with_seed_hint(1).cache_key(""));
        assert_ne!(r.cache_key("gpt-4o"), r.cache_key("gpt-3.5-turbo"));
        let mut other = r.clone();
        other.tag = PromptTag::Filter;
        assert_ne!(r.cache_key(""), other.cache_key(""));
    }

    proptest! {
        #[test]
        fn key_ignores_whitespace_outside_blocks(
            words in proptest::collection::vec("[a-z0-9:.]{1,6}", 1..12),
            seps in proptest::collection::vec(prop_oneof![Just(" "), Just("  "), Just("\n"), Just("\t"), Just(" \n ")], 12),
            block in "[a-z ]{0,12}",
        ) {
            let plain = words.join(" ");
            let spaced: String = words.iter().zip(seps.iter().cycle())
                .map(|(w, s)| format!("{w}{s}")).collect();
            let with_block = |s: &str| format!("{s}\n```\n{block}\n```\n{s}");
            let a = PromptRequest::new(PromptTag::Engineer, with_block(&plain));
            let b = PromptRequest::new(PromptTag::Engineer, with_block(&spaced));
            prop_assert_eq!(a.cache_key("m"), b.cache_key("m"));
        }
    }
}
