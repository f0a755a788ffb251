//! Clients for OpenAI-compatible HTTP endpoints: chat completions for the
//! judge and rollout model, and embeddings.
//!
//! Each client reads `<PREFIX>_URL`, `<PREFIX>_MODEL` and optionally
//! `<PREFIX>_API_KEY` from the environment, e.g. `TRAJKIT_JUDGE_URL`.

use std::time::Duration;

use reqwest::blocking::Client;
use serde_json::{json, Value};

use crate::augment::EmbeddingClient;
use crate::error::{Error, Result};
use crate::judge::{JudgeClient, JudgeReply, JudgeRequest};
use crate::model::{Message, Role, ToolSpec};
use crate::rollout::{ChatModel, Sampling};

pub const JUDGE_ENV: &str = "TRAJKIT_JUDGE";
pub const POLICY_ENV: &str = "TRAJKIT_POLICY";
pub const EMBEDDING_ENV: &str = "TRAJKIT_EMBEDDING";

#[derive(Debug, Clone)]
pub struct Endpoint {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub concurrency: usize,
    pub timeout: Duration,
}

impl Endpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Endpoint {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            model: model.into(),
            api_key: None,
            concurrency: 4,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn from_env(prefix: &str) -> Result<Self> {
        let var = |k: &str| std::env::var(format!("{prefix}_{k}")).ok().filter(|v| !v.is_empty());
        let url = var("URL").ok_or_else(|| Error::Validation(format!("{prefix}_URL is not set")))?;
        let model = var("MODEL").ok_or_else(|| Error::Validation(format!("{prefix}_MODEL is not set")))?;
        let mut ep = Endpoint::new(url, model);
        ep.api_key = var("API_KEY");
        if let Some(n) = var("CONCURRENCY").and_then(|v| v.parse().ok()) {
            ep.concurrency = n;
        }
        Ok(ep)
    }

    fn post(&self, client: &Client, path: &str, body: &Value) -> Result<Value> {
        let mut req = client.post(format!("{}/{path}", self.base_url)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Error::Model(format!("{path}: {e}")))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Model(format!("{path}: {e}")))?;
        if !status.is_success() {
            return Err(Error::Model(format!("{path}: HTTP {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| Error::Model(format!("{path}: bad JSON response: {e}")))
    }
}

fn http_client(timeout: Duration) -> Result<Client> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::Model(e.to_string()))
}

fn first_message(resp: &Value) -> Result<&Value> {
    resp.pointer("/choices/0/message")
        .ok_or_else(|| Error::Model(format!("response has no choices: {resp}")))
}

/// Wire form of a message for chat-completion requests.
pub fn wire_message(m: &Message) -> Value {
    let mut v = json!({"role": m.role.to_string(), "content": m.content});
    if let Some(calls) = m.tool_calls.as_ref().filter(|c| !c.is_empty()) {
        v["tool_calls"] = calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.id,
                    "type": "function",
                    "function": {"name": c.name, "arguments": c.arguments.canonical()},
                })
            })
            .collect();
    }
    if let Some(id) = &m.tool_call_id {
        v["tool_call_id"] = json!(id);
    }
    v
}

pub fn wire_tool(t: &ToolSpec) -> Value {
    json!({
        "type": "function",
        "function": {"name": t.name, "description": t.description, "parameters": t.parameter_schema},
    })
}

pub struct RemoteJudge {
    endpoint: Endpoint,
    client: Client,
}

impl RemoteJudge {
    pub fn new(endpoint: Endpoint) -> Result<Self> {
        let client = http_client(endpoint.timeout)?;
        Ok(RemoteJudge { endpoint, client })
    }

    pub fn from_env() -> Result<Self> {
        Self::new(Endpoint::from_env(JUDGE_ENV)?)
    }
}

impl JudgeClient for RemoteJudge {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeReply> {
        let mut body = json!({
            "model": self.endpoint.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        if let Some(schema) = &request.schema {
            body["response_format"] = json!({
                "type": "json_schema",
                "json_schema": {"name": "judgement", "schema": schema, "strict": true},
            });
        }
        let resp = self.endpoint.post(&self.client, "chat/completions", &body).map_err(|e| Error::Judge(e.to_string()))?;
        let content = first_message(&resp)?
            .get("content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_owned();
        Ok(match serde_json::from_str::<Value>(&content) {
            Ok(v @ Value::Object(_)) if request.schema.is_some() => JudgeReply::Structured(v),
            _ => JudgeReply::Text(content),
        })
    }

    fn max_concurrency(&self) -> usize {
        self.endpoint.concurrency
    }
}

pub struct RemoteChatModel {
    endpoint: Endpoint,
    client: Client,
}

impl RemoteChatModel {
    pub fn new(endpoint: Endpoint) -> Result<Self> {
        let client = http_client(endpoint.timeout)?;
        Ok(RemoteChatModel { endpoint, client })
    }

    pub fn from_env() -> Result<Self> {
        Self::new(Endpoint::from_env(POLICY_ENV)?)
    }
}

impl ChatModel for RemoteChatModel {
    fn name(&self) -> &str {
        &self.endpoint.model
    }

    fn respond(&self, messages: &[Message], tools: &[ToolSpec], sampling: &Sampling) -> Result<Message> {
        let mut body = json!({
            "model": self.endpoint.model,
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "messages": messages.iter().map(wire_message).collect::<Vec<_>>(),
        });
        if !tools.is_empty() {
            body["tools"] = tools.iter().map(wire_tool).collect();
        }
        let resp = self.endpoint.post(&self.client, "chat/completions", &body)?;
        let mut m: Message = serde_json::from_value(first_message(&resp)?.clone())
            .map_err(|e| Error::Model(format!("unreadable assistant message: {e}")))?;
        if m.role != Role::Assistant {
            return Err(Error::Model(format!("expected an assistant message, got {}", m.role)));
        }
        if m.tool_calls.as_ref().is_some_and(Vec::is_empty) {
            m.tool_calls = None;
        }
        Ok(m)
    }
}

pub struct RemoteEmbedder {
    endpoint: Endpoint,
    client: Client,
    batch: usize,
}

impl RemoteEmbedder {
    pub fn new(endpoint: Endpoint) -> Result<Self> {
        let client = http_client(endpoint.timeout)?;
        Ok(RemoteEmbedder {
            endpoint,
            client,
            batch: 64,
        })
    }

    pub fn from_env() -> Result<Self> {
        Self::new(Endpoint::from_env(EMBEDDING_ENV)?)
    }
}

impl EmbeddingClient for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let body = json!({"model": self.endpoint.model, "input": texts});
        let resp = self
            .endpoint
            .post(&self.client, "embeddings", &body)
            .map_err(|e| Error::Embedding(e.to_string()))?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Embedding("response has no data array".into()))?;
        let mut rows: Vec<(u64, Vec<f64>)> = data
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let index = d.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
                let vector = serde_json::from_value(d.get("embedding").cloned().unwrap_or(Value::Null))
                    .map_err(|e| Error::Embedding(format!("bad embedding: {e}")))?;
                Ok((index, vector))
            })
            .collect::<Result<_>>()?;
        rows.sort_by_key(|r| r.0);
        Ok(rows.into_iter().map(|r| r.1).collect())
    }

    fn batch_size(&self) -> usize {
        self.batch
    }
}
