//! Deterministic scripted backend for offline runs and tests.
//!
//! Chat responses come from an ordered rule list (matched on fingerprint,
//! template tag and prompt substrings) and then from an optional responder
//! closure. A request that nothing answers is [`GatewayError::ScriptExhausted`].
//! Embeddings come from an explicit table or from feature hashing of the
//! text's tokens.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{unit_norm, Backend, ChatRequest, EmbeddingRequest, GatewayError, GatewayResult};

fn default_dim() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockRule {
    /// Exact request fingerprint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    /// Template id; matches tags `id@v*`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    /// Substrings that must all appear in the system or user prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    /// Served in order; the last one repeats unless `exhaust` is set.
    pub responses: Vec<String>,
    #[serde(default)]
    pub exhaust: bool,
}

impl MockRule {
    pub fn reply(response: impl Into<String>) -> Self {
        Self {
            responses: vec![response.into()],
            ..Self::default()
        }
    }

    pub fn sequence<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn for_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.fingerprint = Some(fingerprint.into());
        self
    }

    pub fn for_template(mut self, id: impl Into<String>) -> Self {
        self.tag = Some(id.into());
        self
    }

    pub fn when_contains(mut self, needle: impl Into<String>) -> Self {
        self.contains.push(needle.into());
        self
    }

    pub fn exhausting(mut self) -> Self {
        self.exhaust = true;
        self
    }

    fn matches(&self, request: &ChatRequest, fingerprint: &str) -> bool {
        if self
            .fingerprint
            .as_deref()
            .is_some_and(|f| f != fingerprint)
        {
            return false;
        }
        if let Some(tag) = &self.tag {
            let Some(req_tag) = &request.tag else {
                return false;
            };
            let id = req_tag.split('@').next().unwrap_or_default();
            if id != tag && req_tag != tag {
                return false;
            }
        }
        self.contains.iter().all(|needle| {
            request.user_prompt.contains(needle) || request.system_prompt.contains(needle)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Fixed vectors by exact text; other texts are feature-hashed.
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f64>>,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            embeddings: BTreeMap::new(),
            embedding_dim: default_dim(),
        }
    }
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>) -> Self {
        Self {
            rules,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> GatewayResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::InvalidRequest(format!("mock script {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            GatewayError::InvalidRequest(format!("mock script {}: {e}", path.display()))
        })
    }
}

type Responder = dyn Fn(&ChatRequest) -> Option<String> + Send + Sync;

pub struct MockBackend {
    id: String,
    script: MockScript,
    served: Mutex<Vec<usize>>,
    responder: Option<Box<Responder>>,
    requests: Mutex<Vec<ChatRequest>>,
    embedded: Mutex<Vec<String>>,
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockBackend")
            .field("id", &self.id)
            .field("rules", &self.script.rules.len())
            .finish()
    }
}

impl MockBackend {
    pub fn new(id: impl Into<String>, script: MockScript) -> Self {
        let served = Mutex::new(vec![0; script.rules.len()]);
        Self {
            id: id.into(),
            script,
            served,
            responder: None,
            requests: Mutex::new(Vec::new()),
            embedded: Mutex::new(Vec::new()),
        }
    }

    /// A mock answered entirely by `f`, which must be a pure function of the request.
    pub fn from_fn<F>(id: impl Into<String>, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static,
    {
        Self::new(id, MockScript::default()).with_responder(f)
    }

    pub fn with_responder<F>(mut self, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static,
    {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn with_embeddings(mut self, table: BTreeMap<String, Vec<f64>>) -> Self {
        self.script.embeddings = table;
        self
    }

    /// Every chat request received, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("mock request log").clone()
    }

    /// Every text embedded, in arrival order.
    pub fn embedded_texts(&self) -> Vec<String> {
        self.embedded.lock().expect("mock embed log").clone()
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> GatewayResult<String> {
        self.requests
            .lock()
            .expect("mock request log")
            .push(request.clone());
        let fingerprint = request.fingerprint();
        {
            let mut served = self.served.lock().expect("mock counters");
            for (i, rule) in self.script.rules.iter().enumerate() {
                if rule.responses.is_empty() || !rule.matches(request, &fingerprint) {
                    continue;
                }
                let n = served[i];
                if n >= rule.responses.len() && rule.exhaust {
                    continue;
                }
                served[i] += 1;
                return Ok(rule.responses[n.min(rule.responses.len() - 1)].clone());
            }
        }
        self.responder
            .as_ref()
            .and_then(|f| f(request))
            .ok_or(GatewayError::ScriptExhausted { fingerprint })
    }

    fn embed(&self, request: &EmbeddingRequest) -> GatewayResult<Vec<Vec<f64>>> {
        self.embedded
            .lock()
            .expect("mock embed log")
            .extend(request.texts.iter().cloned());
        request
            .texts
            .iter()
            .map(|t| match self.script.embeddings.get(t) {
                Some(v) => unit_norm(v.clone()),
                None => Ok(hash_embedding(t, self.script.embedding_dim)),
            })
            .collect()
    }
}

/// Deterministic unit vector from signed feature hashing of lowercase
/// alphanumeric tokens. Texts without tokens hash as a whole.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let dim = dim.max(1);
    let mut v = vec![0.0; dim];
    let lower = text.to_lowercase();
    for token in lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let digest = Sha256::digest(token.as_bytes());
        let idx = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % dim as u64;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[idx as usize] += sign;
    }
    if v.iter().all(|x| *x == 0.0) {
        let digest = Sha256::digest(text.as_bytes());
        for (i, x) in v.iter_mut().enumerate() {
            *x = f64::from(digest[i % digest.len()]) - 127.5;
        }
    }
    unit_norm(v).expect("hash embedding is non-zero")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Gateway;
    use std::sync::Arc;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn scripted_fingerprint_echo() {
        let req = ChatRequest::new("sys", "Who?");
        let rule = MockRule::reply("Unknown.").for_fingerprint(req.fingerprint());
        let mock = MockBackend::new("m", MockScript::new(vec![rule]));
        assert_eq!(mock.complete(&req).unwrap(), "Unknown.");
        assert!(matches!(
            mock.complete(&ChatRequest::new("sys", "Other?")),
            Err(GatewayError::ScriptExhausted { .. })
        ));
    }

    #[test]
    fn empty_script_is_exhausted() {
        let mock = MockBackend::new("m", MockScript::default());
        let err = mock.complete(&ChatRequest::new("s", "u")).unwrap_err();
        assert!(matches!(err, GatewayError::ScriptExhausted { .. }));
    }

    #[test]
    fn sequences_repeat_last_or_exhaust() {
        let script = MockScript::new(vec![
            MockRule::sequence(["a", "b"])
                .when_contains("first")
                .exhausting(),
            MockRule::sequence(["x", "y"]),
        ]);
        let mock = MockBackend::new("m", script);
        let first = ChatRequest::new("s", "first");
        let other = ChatRequest::new("s", "other");
        let got: Vec<_> = (0..3).map(|_| mock.complete(&first).unwrap()).collect();
        assert_eq!(got, ["a", "b", "x"]);
        assert_eq!(mock.complete(&other).unwrap(), "y");
        assert_eq!(mock.complete(&other).unwrap(), "y");
    }

    #[test]
    fn template_rules_match_on_id() {
        let script = MockScript::new(vec![MockRule::reply("yes").for_template("entailment")]);
        let mock = MockBackend::new("m", script);
        assert_eq!(
            mock.complete(&ChatRequest::new("s", "u").with_tag("entailment@v3"))
                .unwrap(),
            "yes"
        );
        assert!(mock
            .complete(&ChatRequest::new("s", "u").with_tag("qa_answer@v1"))
            .is_err());
    }

    #[test]
    fn hash_embeddings_are_deterministic_unit_vectors() {
        let gw = Gateway::new("m", Arc::new(MockBackend::new("m", MockScript::default())));
        let v = gw
            .embed(&EmbeddingRequest::new(["same text", "same text", "!!!"]))
            .unwrap();
        assert_eq!(v[0], v[1]);
        for x in &v {
            let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hash_embedding_cosine_is_frozen() {
        // Golden value from an independent hashlib reimplementation; no bucket
        // collisions, so it equals 4/sqrt(30).
        let a = hash_embedding("The band Mellow Vibes Harmony", 64);
        let b = hash_embedding("Mellow Vibes Harmony is a band", 64);
        let c = cosine(&a, &b);
        assert!((c - GOLDEN_COSINE).abs() < 1e-12, "cosine drifted: {c}");
    }

    const GOLDEN_COSINE: f64 = 0.7302967433402215;
}
