//! Deterministic rule-driven backend for tests and dry runs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, BackendResponse, ChatBackend, CompletionRecord, CompletionRequest, TokenCounter};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    /// Substring matched against the last user turn.
    pub pattern: String,
    pub response: String,
}

/// Ordered `(pattern -> response)` rules plus a default; first match wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rulebook {
    #[serde(default)]
    pub rules: Vec<Rule>,
    pub default: String,
}

impl Rulebook {
    pub fn new(rules: Vec<(&str, &str)>, default: &str) -> Self {
        Self {
            rules: rules
                .into_iter()
                .map(|(p, r)| Rule {
                    pattern: p.to_string(),
                    response: r.to_string(),
                })
                .collect(),
            default: default.to_string(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn respond(&self, request: &CompletionRequest) -> &str {
        let text = request.last_user_text();
        self.rules
            .iter()
            .find(|r| text.contains(&r.pattern))
            .map(|r| r.response.as_str())
            .unwrap_or(&self.default)
    }

    /// Short content hash, used to tell rulebooks apart in backend ids.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("rulebook serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..6])
    }
}

pub struct MockBackend {
    id: String,
    rulebook: Rulebook,
}

impl MockBackend {
    pub fn new(rulebook: Rulebook) -> Self {
        Self {
            id: format!("mock:{}", rulebook.fingerprint()),
            rulebook,
        }
    }

    pub fn with_id(rulebook: Rulebook, id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            rulebook,
        }
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, request: &CompletionRequest) -> Result<BackendResponse, BackendError> {
        Ok(BackendResponse {
            text: self.rulebook.respond(request).to_string(),
            usage: None,
        })
    }

    fn is_synthetic(&self) -> bool {
        true
    }
}

/// One mock exchange as a record, without any cache or limiter.
pub fn mock_complete(
    request: &CompletionRequest,
    rulebook: &Rulebook,
    backend_id: &str,
    counter: &dyn TokenCounter,
) -> CompletionRecord {
    let text = rulebook.respond(request).to_string();
    CompletionRecord {
        request_digest: request.digest(backend_id),
        prompt_tokens: request.turns.iter().map(|t| counter.count(&t.content)).sum(),
        completion_tokens: counter.count(&text),
        tokens_estimated: true,
        response_text: text,
        latency_ms: 0,
        backend_id: backend_id.to_string(),
        timestamp_ms: 0,
        attempts: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::HeuristicCounter;
    use crate::prompt::ChatTurn;

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest {
            model: "m".into(),
            turns: vec![ChatTurn::user(text).unwrap()],
            temperature: 0.0,
            max_output_tokens: None,
        }
    }

    #[test]
    fn first_match_then_default() {
        let book = Rulebook::new(vec![("word summary", "A short summary.")], "A");
        let r = mock_complete(&req("Please give me a 500 word summary."), &book, "mock", &HeuristicCounter);
        assert_eq!(r.response_text, "A short summary.");
        assert_eq!((r.latency_ms, r.timestamp_ms), (0, 0));
        let r = mock_complete(&req("Here is the question: why?"), &book, "mock", &HeuristicCounter);
        assert_eq!(r.response_text, "A");
    }

    #[test]
    fn empty_rulebook_uses_default() {
        let book = Rulebook::new(vec![], "C");
        for t in ["x", "word summary", "anything"] {
            assert_eq!(book.respond(&req(t)), "C");
        }
    }

    #[test]
    fn rule_order_matters() {
        let book = Rulebook::new(vec![("a", "first"), ("ab", "second")], "d");
        assert_eq!(book.respond(&req("ab")), "first");
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = Rulebook::new(vec![("x", "y")], "A");
        let b = Rulebook::new(vec![("x", "y")], "B");
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(MockBackend::new(a.clone()).id(), MockBackend::new(a).id());
    }
}
