//! Provider-neutral request/response values for text generation and embedding.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Role, TokenUsage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
    /// Set on assistant turns that requested a tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    /// Set on tool turns: the id of the call being answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    fn plain(role: ChatRole, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_call: None,
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(ChatRole::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(ChatRole::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(ChatRole::Assistant, content)
    }

    pub fn assistant_tool_call(call: ToolCall) -> Self {
        Self {
            role: ChatRole::Assistant,
            content: String::new(),
            tool_call: Some(call),
            tool_call_id: None,
        }
    }

    pub fn tool_result(call_id: impl Into<String>, observation: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Tool,
            content: observation.into(),
            tool_call: None,
            tool_call_id: Some(call_id.into()),
        }
    }
}

/// Tool description advertised to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    /// JSON Schema of the arguments object; providers get a single
    /// string `input` property when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<serde_json::Value>,
}

/// Who is calling and on behalf of which items. Backends that replay
/// recorded scripts key their responses on this; live backends ignore it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTag {
    pub role: Role,
    pub query_ids: Vec<String>,
    pub round: u32,
}

impl RequestTag {
    pub fn actor(query_id: impl Into<String>, round: u32) -> Self {
        Self {
            role: Role::Actor,
            query_ids: alloc::vec![query_id.into()],
            round,
        }
    }

    pub fn reflector(query_ids: Vec<String>, round: u32) -> Self {
        Self {
            role: Role::Reflector,
            query_ids,
            round,
        }
    }

    /// `role:id1,id2,...`
    pub fn lane(&self) -> String {
        let mut s = alloc::format!("{}:", self.role);
        for (i, id) in self.query_ids.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(id);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tools: Vec<ToolSchema>,
    pub tag: RequestTag,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RequestError {
    #[error("request has no messages")]
    NoMessages,
    #[error("first message must be system or user, got {0:?}")]
    BadFirstRole(ChatRole),
    #[error("temperature must be a finite value >= 0, got {0}")]
    BadTemperature(f64),
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), RequestError> {
        let first = self.messages.first().ok_or(RequestError::NoMessages)?;
        if !matches!(first.role, ChatRole::System | ChatRole::User) {
            return Err(RequestError::BadFirstRole(first.role));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(RequestError::BadTemperature(self.temperature));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    /// May be empty when `tool_call` is set.
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmbeddingError {
    #[error("embedding has zero dimensions")]
    Empty,
    #[error("embedding contains a non-finite value")]
    NonFinite,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}
