//! HTTP backend speaking the common chat-completions JSON shape.

use std::time::Duration;

use bot_core::chat::{ChatMessage, ChatRequest, ChatResponse, ChatRole, EmbeddingVector, ToolCall};
use bot_core::TokenUsage;
use serde_json::{json, Value};

use crate::backend::{check_dims, BackendError, ChatBackend};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const BASE_URL_VAR: &str = "BOT_BASE_URL";
pub const DEFAULT_API_KEY_VAR: &str = "OPENAI_API_KEY";
pub const MODEL_VAR: &str = "BOT_MODEL";
pub const EMBEDDING_MODEL_VAR: &str = "BOT_EMBEDDING_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub embedding_model: String,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.into(),
            api_key: None,
            model: "gpt-4o".into(),
            embedding_model: "text-embedding-3-small".into(),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }
}

impl LiveConfig {
    /// Read base URL, model names and the key from the environment; the key
    /// variable's name is configurable.
    pub fn from_env(api_key_var: &str) -> Self {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let d = Self::default();
        Self {
            base_url: var(BASE_URL_VAR).unwrap_or(d.base_url),
            api_key: var(api_key_var),
            model: var(MODEL_VAR).unwrap_or(d.model),
            embedding_model: var(EMBEDDING_MODEL_VAR).unwrap_or(d.embedding_model),
            ..d
        }
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    agent: ureq::Agent,
}

fn role_name(role: ChatRole) -> &'static str {
    match role {
        ChatRole::System => "system",
        ChatRole::User => "user",
        ChatRole::Assistant => "assistant",
        ChatRole::Tool => "tool",
    }
}

fn wire_message(m: &ChatMessage) -> Value {
    let mut v = json!({"role": role_name(m.role), "content": m.content});
    if let Some(call) = &m.tool_call {
        v["tool_calls"] = json!([{
            "id": call.id,
            "type": "function",
            "function": {"name": call.name, "arguments": call.arguments},
        }]);
        if m.content.is_empty() {
            v["content"] = Value::Null;
        }
    }
    if let Some(id) = &m.tool_call_id {
        v["tool_call_id"] = json!(id);
    }
    v
}

/// Request body for `/chat/completions`.
pub fn chat_body(model: &str, request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": model,
        "temperature": request.temperature,
        "messages": request.messages.iter().map(wire_message).collect::<Vec<_>>(),
    });
    if !request.tools.is_empty() {
        body["tools"] = request
            .tools
            .iter()
            .map(|t| {
                let params = t.parameters.clone().unwrap_or_else(|| {
                    json!({"type": "object", "properties": {"input": {"type": "string"}}, "required": ["input"]})
                });
                json!({"type": "function", "function": {"name": t.name, "description": t.description, "parameters": params}})
            })
            .collect();
    }
    body
}

/// Decode a `/chat/completions` response.
pub fn parse_chat_response(body: &Value) -> Result<ChatResponse, BackendError> {
    let bad = |what: &str| BackendError::BadResponse(what.to_string());
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| bad("no choices[0].message"))?;
    let content = message.get("content").and_then(Value::as_str).unwrap_or("").to_string();
    let tool_call = match message.pointer("/tool_calls/0") {
        Some(call) => Some(ToolCall {
            id: call.get("id").and_then(Value::as_str).unwrap_or("").to_string(),
            name: call
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("tool call without a function name"))?
                .to_string(),
            arguments: call
                .pointer("/function/arguments")
                .and_then(Value::as_str)
                .unwrap_or("")
                .to_string(),
        }),
        None => None,
    };
    let usage = body.get("usage").filter(|u| !u.is_null()).ok_or(BackendError::UsageMissing)?;
    let count = |key: &str| usage.get(key).and_then(Value::as_u64).ok_or(BackendError::UsageMissing);
    Ok(ChatResponse {
        content,
        tool_call,
        usage: TokenUsage::new(count("prompt_tokens")?, count("completion_tokens")?),
    })
}

pub fn parse_embedding_response(body: &Value, expected: usize) -> Result<Vec<EmbeddingVector>, BackendError> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::BadResponse("no data array".into()))?;
    if data.len() != expected {
        return Err(BackendError::BadResponse(format!("{} embeddings for {expected} inputs", data.len())));
    }
    let mut rows: Vec<(u64, EmbeddingVector)> = data
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let index = d.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
            let values = d
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| BackendError::BadResponse("entry without embedding".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| BackendError::BadResponse("non-numeric embedding".into())))
                .collect::<Result<Vec<f64>, _>>()?;
            let v = EmbeddingVector::new(values).map_err(|e| BackendError::BadResponse(e.to_string()))?;
            Ok((index, v))
        })
        .collect::<Result<_, BackendError>>()?;
    rows.sort_by_key(|r| r.0);
    let out: Vec<EmbeddingVector> = rows.into_iter().map(|r| r.1).collect();
    check_dims(&out)?;
    Ok(out)
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self { config, agent }
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    /// POST with retries on transport failures and 429.
    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let payload = body.to_string();
        let attempts = self.config.max_attempts.max(1);
        let mut delay = self.config.backoff;
        let mut attempt = 1;
        loop {
            let mut req = self.agent.post(&url).set("Content-Type", "application/json");
            if let Some(key) = &self.config.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            let err = match req.send_string(&payload) {
                Ok(resp) => {
                    let text = resp.into_string().map_err(|e| BackendError::Transport(e.to_string()))?;
                    return serde_json::from_str(&text).map_err(|e| BackendError::BadResponse(e.to_string()));
                }
                Err(ureq::Error::Status(status, resp)) => {
                    let body = resp.into_string().unwrap_or_default();
                    if status != 429 {
                        return Err(BackendError::Provider { status, body });
                    }
                    BackendError::Provider { status, body }
                }
                Err(ureq::Error::Transport(t)) => BackendError::Transport(t.to_string()),
            };
            if attempt >= attempts {
                return Err(err);
            }
            log::warn!("{url}: attempt {attempt} failed ({err}); retrying in {delay:?}");
            std::thread::sleep(delay);
            delay *= 2;
            attempt += 1;
        }
    }
}

impl ChatBackend for LiveBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let body = self.post("chat/completions", &chat_body(&self.config.model, request))?;
        parse_chat_response(&body)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let body = self.post(
            "embeddings",
            &json!({"model": self.config.embedding_model, "input": texts}),
        )?;
        parse_embedding_response(&body, texts.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bot_core::chat::{RequestTag, ToolSchema};

    fn request() -> ChatRequest {
        ChatRequest {
            messages: vec![
                ChatMessage::system("sys"),
                ChatMessage::user("q"),
                ChatMessage::assistant_tool_call(ToolCall {
                    id: "c1".into(),
                    name: "search".into(),
                    arguments: "{\"input\":\"x\"}".into(),
                }),
                ChatMessage::tool_result("c1", "obs"),
            ],
            temperature: 0.0,
            tools: vec![ToolSchema {
                name: "search".into(),
                description: "web search".into(),
                parameters: None,
            }],
            tag: RequestTag::actor("q", 1),
        }
    }

    #[test]
    fn body_shape() {
        let b = chat_body("m", &request());
        assert_eq!(b["model"], "m");
        assert_eq!(b["messages"][2]["tool_calls"][0]["function"]["name"], "search");
        assert!(b["messages"][2]["content"].is_null());
        assert_eq!(b["messages"][3]["tool_call_id"], "c1");
        assert_eq!(b["tools"][0]["function"]["parameters"]["required"][0], "input");
    }

    #[test]
    fn response_parsing() {
        let ok = json!({
            "choices": [{"message": {"content": "hi"}}],
            "usage": {"prompt_tokens": 3, "completion_tokens": 1}
        });
        let r = parse_chat_response(&ok).unwrap();
        assert_eq!(r.content, "hi");
        assert_eq!(r.usage, TokenUsage::new(3, 1));

        let tool = json!({
            "choices": [{"message": {"content": null, "tool_calls": [{"id": "t", "function": {"name": "search", "arguments": "{}"}}]}}],
            "usage": {"prompt_tokens": 3, "completion_tokens": 1}
        });
        assert_eq!(parse_chat_response(&tool).unwrap().tool_call.unwrap().name, "search");

        let no_usage = json!({"choices": [{"message": {"content": "hi"}}]});
        assert_eq!(parse_chat_response(&no_usage), Err(BackendError::UsageMissing));
    }

    #[test]
    fn embedding_parsing_orders_by_index() {
        let body = json!({"data": [{"index": 1, "embedding": [0, 1]}, {"index": 0, "embedding": [1, 0]}]});
        let v = parse_embedding_response(&body, 2).unwrap();
        assert_eq!(v[0].values, [1.0, 0.0]);
        let bad = json!({"data": [{"embedding": [0, 1]}, {"embedding": [1]}]});
        assert_eq!(parse_embedding_response(&bad, 2), Err(BackendError::DimensionMismatch));
    }
}
