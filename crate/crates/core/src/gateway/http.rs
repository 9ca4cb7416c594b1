//! OpenAI-style chat-completion and embedding client.
//!
//! Request bodies:
//! - `POST {endpoint}/chat/completions` with `model`, `messages` (system then
//!   user), `temperature`, `max_tokens` and optional `seed`; the answer is
//!   `choices[0].message.content`.
//! - `POST {endpoint}/embeddings` with `model` and `input` (list of texts);
//!   vectors are read from `data[*].embedding`, ordered by `data[*].index`.
//!
//! Status 401/403 map to [`GatewayError::Auth`], 408/429/5xx and connection
//! failures to the retryable [`GatewayError::Transport`], anything else to
//! [`GatewayError::Protocol`].

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, ChatRequest, EmbeddingRequest, GatewayError, GatewayResult};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Value,
}

/// Minimal JSON-over-HTTP seam so tests can stub the network.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, String>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct UreqTransport;

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut request = agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = bearer {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        let body = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Ok(HttpResponse { status, body })
    }
}

pub struct OpenAiBackend {
    id: String,
    endpoint: String,
    model: String,
    embedding_model: Option<String>,
    api_key: Option<String>,
    timeout: Duration,
    transport: Arc<dyn HttpTransport>,
}

impl OpenAiBackend {
    pub fn new(
        id: impl Into<String>,
        endpoint: impl Into<String>,
        model: impl Into<String>,
        embedding_model: Option<String>,
        api_key: Option<String>,
        timeout: Duration,
        transport: Arc<dyn HttpTransport>,
    ) -> Self {
        Self {
            id: id.into(),
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
            model: model.into(),
            embedding_model,
            api_key,
            timeout,
            transport,
        }
    }

    fn post(&self, path: &str, body: &Value) -> GatewayResult<Value> {
        let url = format!("{}/{path}", self.endpoint);
        let resp = self
            .transport
            .post_json(&url, self.api_key.as_deref(), body, self.timeout)
            .map_err(|message| GatewayError::Transport {
                attempts: 1,
                message,
            })?;
        match resp.status {
            200..=299 => Ok(resp.body),
            401 | 403 => Err(GatewayError::Auth(format!("{url}: HTTP {}", resp.status))),
            408 | 429 | 500..=599 => Err(GatewayError::Transport {
                attempts: 1,
                message: format!("{url}: HTTP {}", resp.status),
            }),
            s => Err(GatewayError::Protocol(format!(
                "{url}: HTTP {s}: {}",
                resp.body
            ))),
        }
    }
}

pub fn chat_body(model: &str, request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": model,
        "messages": [
            {"role": "system", "content": request.system_prompt},
            {"role": "user", "content": request.user_prompt},
        ],
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    });
    if let Some(seed) = request.seed {
        body["seed"] = json!(seed);
    }
    body
}

impl Backend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> GatewayResult<String> {
        let body = self.post("chat/completions", &chat_body(&self.model, request))?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| {
                GatewayError::Protocol("response has no choices[0].message.content".into())
            })
    }

    fn embed(&self, request: &EmbeddingRequest) -> GatewayResult<Vec<Vec<f64>>> {
        let model = self.embedding_model.as_deref().ok_or_else(|| {
            GatewayError::Unsupported(format!("profile `{}` has no embedding model", self.id))
        })?;
        let body = self.post(
            "embeddings",
            &json!({ "model": model, "input": request.texts }),
        )?;
        let data = body
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Protocol("embedding response has no data".into()))?;
        let mut rows: Vec<(u64, Vec<f64>)> = data
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let index = item
                    .get("index")
                    .and_then(Value::as_u64)
                    .unwrap_or(i as u64);
                let vector = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| GatewayError::Protocol("embedding item has no vector".into()))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .ok_or_else(|| GatewayError::Protocol("non-numeric embedding".into()))
                    })
                    .collect::<GatewayResult<Vec<f64>>>()?;
                Ok((index, vector))
            })
            .collect::<GatewayResult<_>>()?;
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}
