use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CompletionResponse, LlmError, LlmProvider, ModelTier, PromptRequest, Usage};

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    /// Model used for selection, engineering and nomination.
    pub model_id: String,
    /// Model used for parsing and rewriting. Falls back to `model_id`.
    #[serde(default)]
    pub routine_model_id: Option<String>,
    #[serde(skip_serializing, default)]
    pub api_key: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// First backoff delay; doubles on every retry.
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

impl std::fmt::Debug for ProviderConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderConfig")
            .field("endpoint", &self.endpoint)
            .field("model_id", &self.model_id)
            .field("routine_model_id", &self.routine_model_id)
            .field("api_key", &"<redacted>")
            .field("timeout_secs", &self.timeout_secs)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl ProviderConfig {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            routine_model_id: None,
            api_key: api_key.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_base_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.timeout_secs > 0.0) {
            return Err(LlmError::InvalidConfig(format!(
                "timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        if self.endpoint.is_empty() || self.model_id.is_empty() {
            return Err(LlmError::InvalidConfig("endpoint and model_id are required".into()));
        }
        Ok(())
    }

    pub fn model_for(&self, tier: ModelTier) -> &str {
        match tier {
            ModelTier::Reasoning => &self.model_id,
            ModelTier::Routine => self.routine_model_id.as_deref().unwrap_or(&self.model_id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Moves one JSON body to the endpoint. `Err` means no HTTP status was
/// received at all (DNS, connect, timeout).
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, api_key: &str, body: &str, timeout: Duration) -> Result<HttpReply, String>;
}

#[derive(Debug, Default)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, api_key: &str, body: &str, timeout: Duration) -> Result<HttpReply, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .post(url)
            .header("Authorization", &format!("Bearer {api_key}"))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

/// Chat-completions client. Transport failures, HTTP 429 and 5xx are retried
/// with exponential backoff up to `max_retries` times; other 4xx fail at once.
pub struct ChatClient<T = UreqTransport> {
    cfg: ProviderConfig,
    transport: T,
}

impl ChatClient<UreqTransport> {
    pub fn new(cfg: ProviderConfig) -> Result<Self, LlmError> {
        Self::with_transport(cfg, UreqTransport)
    }
}

impl<T: Transport> ChatClient<T> {
    pub fn with_transport(cfg: ProviderConfig, transport: T) -> Result<Self, LlmError> {
        cfg.validate()?;
        Ok(Self { cfg, transport })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    fn request_body(&self, req: &PromptRequest) -> String {
        let mut messages = Vec::new();
        if !req.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": req.system_text}));
        }
        messages.push(json!({"role": "user", "content": req.user_text}));
        let mut body = json!({
            "model": self.cfg.model_for(req.tag.tier()),
            "messages": messages,
            "temperature": req.temperature,
        });
        if let Some(seed) = req.seed_hint {
            body["seed"] = json!(seed);
        }
        body.to_string()
    }
}

fn parse_completion(body: &str) -> Result<CompletionResponse, String> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| format!("bad JSON: {e}"))?;
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| "response has no choices[0].message.content".to_string())?;
    if text.is_empty() {
        return Err("empty completion".into());
    }
    let usage = Usage {
        prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    };
    Ok(CompletionResponse {
        text: text.to_string(),
        usage,
        cached: false,
    })
}

impl<T: Transport> LlmProvider for ChatClient<T> {
    fn complete(&self, req: &PromptRequest) -> Result<CompletionResponse, LlmError> {
        req.validate()?;
        let body = self.request_body(req);
        let timeout = Duration::from_secs_f64(self.cfg.timeout_secs);
        let max_attempts = self.cfg.max_retries + 1;
        let mut last_rate_limited = false;
        let mut last_message = String::new();
        for attempt in 1..=max_attempts {
            match self
                .transport
                .post_json(&self.cfg.endpoint, &self.cfg.api_key, &body, timeout)
            {
                Ok(reply) if reply.status == 200 => {
                    return parse_completion(&reply.body).map_err(|message| LlmError::ProviderRejected {
                        status: reply.status,
                        message,
                    });
                }
                Ok(reply) if reply.status == 429 => {
                    last_rate_limited = true;
                    last_message = reply.body;
                }
                Ok(reply) if reply.status >= 500 => {
                    last_rate_limited = false;
                    last_message = format!("HTTP {}: {}", reply.status, reply.body);
                }
                Ok(reply) => {
                    return Err(LlmError::ProviderRejected {
                        status: reply.status,
                        message: reply.body,
                    })
                }
                Err(e) => {
                    last_rate_limited = false;
                    last_message = e;
                }
            }
            if attempt < max_attempts {
                let delay = self.cfg.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                log::warn!("LLM attempt {attempt}/{max_attempts} failed, retrying in {delay} ms");
                std::thread::sleep(Duration::from_millis(delay));
            }
        }
        if last_rate_limited {
            Err(LlmError::RateLimited { attempts: max_attempts })
        } else {
            Err(LlmError::Transport {
                attempts: max_attempts,
                message: last_message,
            })
        }
    }

    fn namespace(&self, tier: ModelTier) -> String {
        self.cfg.model_for(tier).to_string()
    }
}

/// One-shot convenience over [`ChatClient`].
pub fn complete(cfg: &ProviderConfig, req: &PromptRequest) -> Result<CompletionResponse, LlmError> {
    ChatClient::new(cfg.clone())?.complete(req)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::PromptTag;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;

    /// Fails the first `failures` calls with `fail`, then succeeds.
    struct Flaky {
        failures: u32,
        fail: Result<HttpReply, String>,
        calls: AtomicU32,
        bodies: Mutex<Vec<String>>,
    }

    impl Flaky {
        fn new(failures: u32, fail: Result<HttpReply, String>) -> Self {
            Self {
                failures,
                fail,
                calls: AtomicU32::new(0),
                bodies: Mutex::new(Vec::new()),
            }
        }
    }

    impl Transport for Flaky {
        fn post_json(&self, _: &str, _: &str, body: &str, _: Duration) -> Result<HttpReply, String> {
            self.bodies.lock().unwrap().push(body.to_string());
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                self.fail.clone()
            } else {
                Ok(HttpReply {
                    status: 200,
                    body: r#"{"choices":[{"message":{"role":"assistant","content":"Yes"}}],"usage":{"prompt_tokens":7,"completion_tokens":1}}"#.into(),
                })
            }
        }
    }

    fn cfg(retries: u32) -> ProviderConfig {
        let mut c = ProviderConfig::new("http://localhost/v1/chat/completions", "gpt-4o-2024-05-13", "k");
        c.routine_model_id = Some("gpt-3.5-turbo".into());
        c.max_retries = retries;
        c.backoff_base_ms = 0;
        c
    }

    fn req() -> PromptRequest {
        PromptRequest::new(PromptTag::Filter, "rs671: relevant?").with_seed_hint(4)
    }

    #[test]
    fn retries_then_succeeds() {
        let client = ChatClient::with_transport(cfg(3), Flaky::new(2, Err("connection reset".into()))).unwrap();
        let resp = client.complete(&req()).unwrap();
        assert_eq!(resp.text, "Yes");
        assert_eq!(resp.usage.prompt_tokens, 7);
        assert_eq!(client.transport.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn attempts_bounded_by_retries() {
        for retries in 0..4 {
            let client = ChatClient::with_transport(cfg(retries), Flaky::new(u32::MAX, Err("down".into()))).unwrap();
            match client.complete(&req()) {
                Err(LlmError::Transport { attempts, .. }) => assert_eq!(attempts, retries + 1),
                other => panic!("{other:?}"),
            }
            assert_eq!(client.transport.calls.load(Ordering::SeqCst), retries + 1);
        }
    }

    #[test]
    fn rate_limit_and_rejection() {
        let limited = Flaky::new(
            u32::MAX,
            Ok(HttpReply {
                status: 429,
                body: "slow down".into(),
            }),
        );
        let client = ChatClient::with_transport(cfg(1), limited).unwrap();
        assert!(matches!(
            client.complete(&req()),
            Err(LlmError::RateLimited { attempts: 2 })
        ));

        let rejected = Flaky::new(
            u32::MAX,
            Ok(HttpReply {
                status: 400,
                body: "bad".into(),
            }),
        );
        let client = ChatClient::with_transport(cfg(5), rejected).unwrap();
        assert!(matches!(
            client.complete(&req()),
            Err(LlmError::ProviderRejected { status: 400, .. })
        ));
        assert_eq!(client.transport.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn body_uses_tier_model() {
        let client = ChatClient::with_transport(cfg(0), Flaky::new(0, Err(String::new()))).unwrap();
        client.complete(&req()).unwrap();
        client
            .complete(&PromptRequest::new(PromptTag::Parse, "extract"))
            .unwrap();
        let bodies = client.transport.bodies.lock().unwrap();
        let first: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        let second: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(first["model"], "gpt-4o-2024-05-13");
        assert_eq!(first["seed"], 4);
        assert_eq!(second["model"], "gpt-3.5-turbo");
    }

    #[test]
    fn config_invariants() {
        let mut c = cfg(0);
        c.timeout_secs = 0.0;
        assert!(matches!(c.validate(), Err(LlmError::InvalidConfig(_))));
        assert!(!format!("{:?}", cfg(0)).contains("\"k\""));
    }
}
