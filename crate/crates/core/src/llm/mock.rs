use std::sync::Mutex;

use super::{CompletionResponse, LlmError, LlmProvider, PromptRequest};

type Responder = dyn Fn(&PromptRequest, usize) -> Result<String, LlmError> + Send + Sync;

/// Scripted provider for tests. The responder sees each request together with
/// its zero-based call index; every request is kept for inspection.
pub struct MockProvider {
    responder: Box<Responder>,
    log: Mutex<Vec<PromptRequest>>,
}

impl MockProvider {
    pub fn new<F>(responder: F) -> Self
    where
        F: Fn(&PromptRequest, usize) -> Result<String, LlmError> + Send + Sync + 'static,
    {
        Self {
            responder: Box::new(responder),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_, _| Ok(text.clone()))
    }

    /// Replies with the request's own user text.
    pub fn echo() -> Self {
        Self::new(|req, _| Ok(req.user_text.clone()))
    }

    /// Replies with `texts` in order, repeating the last one forever.
    pub fn sequence<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        let texts: Vec<String> = texts.into_iter().map(Into::into).collect();
        assert!(!texts.is_empty(), "sequence needs at least one response");
        Self::new(move |_, i| Ok(texts[i.min(texts.len() - 1)].clone()))
    }

    pub fn calls(&self) -> usize {
        self.log.lock().expect("mock log").len()
    }

    pub fn requests(&self) -> Vec<PromptRequest> {
        self.log.lock().expect("mock log").clone()
    }
}

impl LlmProvider for MockProvider {
    fn complete(&self, req: &PromptRequest) -> Result<CompletionResponse, LlmError> {
        req.validate()?;
        let index = {
            let mut log = self.log.lock().expect("mock log");
            log.push(req.clone());
            log.len() - 1
        };
        (self.responder)(req, index).map(CompletionResponse::text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::PromptTag;

    #[test]
    fn scripted_by_tag() {
        let mock = MockProvider::new(|req, _| {
            Ok(match req.tag {
                PromptTag::Filter => "Yes".into(),
                _ => "No".into(),
            })
        });
        let r = mock.complete(&PromptRequest::new(PromptTag::Filter, "rs1?")).unwrap();
        assert_eq!(r.text, "Yes");
        assert!(!r.cached);
        assert_eq!(
            mock.complete(&PromptRequest::new(PromptTag::Select, "x")).unwrap().text,
            "No"
        );
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn sequence_repeats_last() {
        let mock = MockProvider::sequence(["a", "b"]);
        let req = PromptRequest::new(PromptTag::Parse, "q");
        let got: Vec<String> = (0..4).map(|_| mock.complete(&req).unwrap().text).collect();
        assert_eq!(got, ["a", "b", "b", "b"]);
    }
}
