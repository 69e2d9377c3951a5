//! Append-only JSONL response cache.
//!
//! Each line is one [`CacheRecord`]. [`RecordingProvider`] answers from the
//! cache when it can and appends every fresh response; [`ReplayProvider`]
//! never calls a model and fails with [`LlmError::CacheMiss`] in strict mode.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{CompletionResponse, LlmError, LlmProvider, ModelTier, PromptRequest, Usage};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CacheRecord {
    pub hash: String,
    pub request: PromptRequest,
    pub response: CachedText,
    pub timestamp: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CachedText {
    pub text: String,
    #[serde(default)]
    pub usage: Usage,
}

fn load_records(path: &Path) -> Result<HashMap<String, CompletionResponse>, LlmError> {
    let mut map = HashMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(map),
        Err(e) => return Err(e.into()),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| LlmError::CorruptCache {
            line: i + 1,
            message: e.to_string(),
        })?;
        // First record wins so replays see what the original run saw.
        map.entry(rec.hash).or_insert(CompletionResponse {
            text: rec.response.text,
            usage: rec.response.usage,
            cached: true,
        });
    }
    Ok(map)
}

struct CacheLog {
    path: PathBuf,
    entries: RwLock<HashMap<String, CompletionResponse>>,
    writer: Mutex<File>,
}

impl CacheLog {
    fn open(path: &Path) -> Result<Self, LlmError> {
        let entries = load_records(path)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let writer = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
        })
    }

    fn get(&self, hash: &str) -> Option<CompletionResponse> {
        self.entries.read().expect("cache lock").get(hash).cloned()
    }

    fn append(&self, hash: String, req: &PromptRequest, resp: &CompletionResponse) -> Result<(), LlmError> {
        let record = CacheRecord {
            hash: hash.clone(),
            request: req.clone(),
            response: CachedText {
                text: resp.text.clone(),
                usage: resp.usage,
            },
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let mut line = serde_json::to_string(&record).map_err(|e| LlmError::CorruptCache {
            line: 0,
            message: e.to_string(),
        })?;
        line.push('\n');
        {
            let mut w = self.writer.lock().expect("cache writer lock");
            w.write_all(line.as_bytes())?;
            w.flush()?;
        }
        let mut cached = resp.clone();
        cached.cached = true;
        self.entries.write().expect("cache lock").entry(hash).or_insert(cached);
        Ok(())
    }
}

/// Wraps a live provider and records every response it returns.
pub struct RecordingProvider<P> {
    inner: P,
    log: CacheLog,
}

impl<P: LlmProvider> RecordingProvider<P> {
    pub fn open(inner: P, path: impl AsRef<Path>) -> Result<Self, LlmError> {
        Ok(Self {
            inner,
            log: CacheLog::open(path.as_ref())?,
        })
    }

    pub fn path(&self) -> &Path {
        &self.log.path
    }
}

impl<P: LlmProvider> LlmProvider for RecordingProvider<P> {
    fn complete(&self, req: &PromptRequest) -> Result<CompletionResponse, LlmError> {
        req.validate()?;
        let hash = req.cache_key(&self.inner.namespace(req.tag.tier()));
        if let Some(hit) = self.log.get(&hash) {
            return Ok(hit);
        }
        let resp = self.inner.complete(req)?;
        self.log.append(hash, req, &resp)?;
        Ok(resp)
    }

    fn namespace(&self, tier: ModelTier) -> String {
        self.inner.namespace(tier)
    }
}

/// Serves responses from a recorded cache only.
pub struct ReplayProvider {
    entries: HashMap<String, CompletionResponse>,
    namespaces: [String; 2],
    strict: bool,
}

impl ReplayProvider {
    /// Strict replay of `path`. A missing file is treated as an empty cache.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        Ok(Self {
            entries: load_records(path.as_ref())?,
            namespaces: [String::new(), String::new()],
            strict: true,
        })
    }

    /// Model identities to mix into keys; must match the recording run.
    pub fn with_namespaces(mut self, reasoning: impl Into<String>, routine: impl Into<String>) -> Self {
        self.namespaces = [reasoning.into(), routine.into()];
        self
    }

    /// Non-strict replay answers misses with an empty completion instead of
    /// failing.
    pub fn lenient(mut self) -> Self {
        self.strict = false;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn replay_provider(cache_path: impl AsRef<Path>) -> Result<ReplayProvider, LlmError> {
    ReplayProvider::open(cache_path)
}

impl LlmProvider for ReplayProvider {
    fn complete(&self, req: &PromptRequest) -> Result<CompletionResponse, LlmError> {
        req.validate()?;
        let hash = req.cache_key(&self.namespace(req.tag.tier()));
        match self.entries.get(&hash) {
            Some(hit) => Ok(hit.clone()),
            None if self.strict => Err(LlmError::CacheMiss { hash, tag: req.tag }),
            None => Ok(CompletionResponse {
                text: String::new(),
                usage: Usage::default(),
                cached: false,
            }),
        }
    }

    fn namespace(&self, tier: ModelTier) -> String {
        match tier {
            ModelTier::Reasoning => self.namespaces[0].clone(),
            ModelTier::Routine => self.namespaces[1].clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockProvider, PromptTag};

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mock = MockProvider::constant("rs671, rs3827760");
        let rec = RecordingProvider::open(&mock, &path).unwrap();
        let req = PromptRequest::new(PromptTag::Select, "pick two").with_temperature(0.3);
        let first = rec.complete(&req).unwrap();
        assert!(!first.cached);
        let again = rec.complete(&req).unwrap();
        assert!(again.cached);
        assert_eq!(mock.calls(), 1);

        let replay = replay_provider(&path).unwrap();
        let hit = replay.complete(&req).unwrap();
        assert_eq!(hit.text, "rs671, rs3827760");
        assert!(hit.cached);
    }

    #[test]
    fn strict_miss() {
        let dir = tempfile::tempdir().unwrap();
        let replay = replay_provider(dir.path().join("none.jsonl")).unwrap();
        let req = PromptRequest::new(PromptTag::Filter, "anything");
        assert!(matches!(replay.complete(&req), Err(LlmError::CacheMiss { .. })));
        assert_eq!(replay.lenient().complete(&req).unwrap().text, "");
    }

    #[test]
    fn corrupt_line_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(
            replay_provider(&path),
            Err(LlmError::CorruptCache { line: 1, .. })
        ));
    }

    #[test]
    fn concurrent_appends_are_whole_lines() {
        use rayon::prelude::*;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let rec = RecordingProvider::open(MockProvider::echo(), &path).unwrap();
        (0..64).into_par_iter().for_each(|i| {
            rec.complete(&PromptRequest::new(PromptTag::Parse, format!("line {i}")))
                .unwrap();
        });
        let replay = replay_provider(&path).unwrap();
        assert_eq!(replay.len(), 64);
    }
}
