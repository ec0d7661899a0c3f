//! ReAct-style Actor: reason, optionally call tools, answer.

use bot_core::chat::{ChatMessage, ChatRequest, RequestTag};
use bot_core::parse::parse_actor_answer;
use bot_core::prompts::{ActorPrompt, FORCE_ANSWER};
use bot_core::{ActorOutput, Query, Role, TokenUsage, ToolStep};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, SharedLedger};
use crate::tools::{ToolError, ToolRegistry};

pub const DEFAULT_MAX_TOOL_CALLS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActorError {
    #[error("tool {0:?} is not registered")]
    ToolNotFound(String),
    #[error(transparent)]
    Tool(ToolError),
    #[error("model kept requesting tools after {0} calls and a forced-answer prompt")]
    MaxToolCallsExceeded(usize),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no answer could be extracted after a repair attempt")]
    AnswerParseFailure { last_response: String },
}

impl From<ToolError> for ActorError {
    fn from(e: ToolError) -> Self {
        match e {
            ToolError::NotFound(name) => ActorError::ToolNotFound(name),
            other => ActorError::Tool(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorSettings {
    pub prompt: ActorPrompt,
    pub max_tool_calls: usize,
    pub temperature: f64,
}

impl Default for ActorSettings {
    fn default() -> Self {
        Self {
            prompt: ActorPrompt::choice(),
            max_tool_calls: DEFAULT_MAX_TOOL_CALLS,
            temperature: 0.0,
        }
    }
}

/// Opening messages for a query; the critique, if any, follows the question
/// as its own user turn.
pub fn initial_messages(query: &Query, critique: Option<&str>, prompt: &ActorPrompt) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::system(prompt.system.clone()), ChatMessage::user(query.display_text())];
    if let Some(c) = critique {
        messages.push(ChatMessage::user(ActorPrompt::feedback_message(c)));
    }
    messages
}

struct Session<'a> {
    backend: &'a dyn ChatBackend,
    ledger: &'a SharedLedger,
    tag: RequestTag,
    temperature: f64,
    usage: TokenUsage,
}

impl Session<'_> {
    fn call(
        &mut self,
        messages: &[ChatMessage],
        tools: Vec<bot_core::chat::ToolSchema>,
    ) -> Result<bot_core::chat::ChatResponse, ActorError> {
        let request = ChatRequest {
            messages: messages.to_vec(),
            temperature: self.temperature,
            tools,
            tag: self.tag.clone(),
        };
        let resp = self.backend.chat(&request)?;
        self.ledger.record(Role::Actor, resp.usage);
        self.usage += resp.usage;
        Ok(resp)
    }
}

/// Run one Actor episode. Every backend call is charged to `ledger` under
/// the actor role as soon as it returns.
pub fn act(
    query: &Query,
    critique: Option<&str>,
    round: u32,
    tools: &ToolRegistry,
    settings: &ActorSettings,
    backend: &dyn ChatBackend,
    ledger: &SharedLedger,
) -> Result<ActorOutput, ActorError> {
    let mut session = Session {
        backend,
        ledger,
        tag: RequestTag::actor(query.id.clone(), round),
        temperature: settings.temperature,
        usage: TokenUsage::ZERO,
    };
    let mut messages = initial_messages(query, critique, &settings.prompt);
    let mut trajectory: Vec<ToolStep> = Vec::new();
    let schemas = tools.schemas();

    let content = loop {
        let offered = if trajectory.len() < settings.max_tool_calls {
            schemas.clone()
        } else {
            Vec::new()
        };
        let resp = session.call(&messages, offered)?;
        let Some(call) = resp.tool_call else {
            break resp.content;
        };
        if trajectory.len() >= settings.max_tool_calls {
            messages.push(ChatMessage::user(FORCE_ANSWER));
            let forced = session.call(&messages, Vec::new())?;
            if forced.tool_call.is_some() {
                return Err(ActorError::MaxToolCallsExceeded(settings.max_tool_calls));
            }
            break forced.content;
        }
        let observation = tools.invoke(&call.name, &call.arguments)?;
        trajectory.push(ToolStep {
            tool_name: call.name.clone(),
            arguments: call.arguments.clone(),
            observation: observation.clone(),
        });
        let id = call.id.clone();
        messages.push(ChatMessage::assistant_tool_call(call));
        messages.push(ChatMessage::tool_result(id, observation));
    };

    let parsed = match parse_actor_answer(&content, &settings.prompt.format) {
        Some(p) => p,
        None => {
            messages.push(ChatMessage::assistant(content));
            messages.push(ChatMessage::user(settings.prompt.repair_message()));
            let retry = session.call(&messages, Vec::new())?;
            match retry.tool_call {
                None => parse_actor_answer(&retry.content, &settings.prompt.format).ok_or(
                    ActorError::AnswerParseFailure {
                        last_response: retry.content,
                    },
                )?,
                Some(_) => {
                    return Err(ActorError::AnswerParseFailure {
                        last_response: retry.content,
                    })
                }
            }
        }
    };

    Ok(ActorOutput {
        query_id: query.id.clone(),
        answer: parsed.answer,
        rationale: parsed.rationale,
        trajectory,
        usage: session.usage,
        round,
        verbalized_confidence: parsed.confidence,
    })
}
