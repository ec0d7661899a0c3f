//! Joint Reflector: one call judges every item of the batch.

use bot_core::chat::{ChatMessage, ChatRequest, RequestTag};
use bot_core::parse::{parse_verdicts, VerdictParseError};
use bot_core::prompts::{ReflectorPrompt, ReflectorPromptTemplate, TemplateError};
use bot_core::{ReflectionVerdict, ReflectiveContext, Role};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, SharedLedger};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReflectError {
    #[error("context is empty")]
    EmptyContext,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("verdicts unusable after a repair attempt: {source}")]
    VerdictParseFailure {
        source: VerdictParseError,
        last_response: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReflectorSettings {
    pub template: ReflectorPromptTemplate,
    pub temperature: f64,
}

/// The instruction block travels once as the system turn; all item blocks
/// share one user turn.
pub fn reflector_messages(prompt: &ReflectorPrompt) -> Vec<ChatMessage> {
    vec![ChatMessage::system(prompt.instruction.clone()), ChatMessage::user(prompt.items.clone())]
}

pub fn repair_message(n: usize, err: &VerdictParseError) -> String {
    format!(
        "Your previous response could not be used ({err}). Output only a JSON list with exactly {n} entries, \
         one per question in order, each with the keys trigger_reevaluation, summary_comment, confidence_score and suggestions."
    )
}

pub fn reflect(
    ctx: &ReflectiveContext,
    settings: &ReflectorSettings,
    backend: &dyn ChatBackend,
    ledger: &SharedLedger,
) -> Result<Vec<ReflectionVerdict>, ReflectError> {
    if ctx.is_empty() {
        return Err(ReflectError::EmptyContext);
    }
    settings.template.validate()?;
    let n = ctx.len();
    let prompt = settings.template.render(ctx);
    let mut messages = reflector_messages(&prompt);
    let tag = RequestTag::reflector(ctx.query_ids(), ctx.round);
    let call = |messages: &[ChatMessage]| -> Result<String, ReflectError> {
        let resp = backend.chat(&ChatRequest {
            messages: messages.to_vec(),
            temperature: settings.temperature,
            tools: Vec::new(),
            tag: tag.clone(),
        })?;
        ledger.record(Role::Reflector, resp.usage);
        Ok(resp.content)
    };

    let first = call(&messages)?;
    let parsed = match parse_verdicts(&first, n) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("reflector output for round {} rejected: {e}", ctx.round);
            messages.push(ChatMessage::assistant(first));
            messages.push(ChatMessage::user(repair_message(n, &e)));
            let second = call(&messages)?;
            parse_verdicts(&second, n).map_err(|source| ReflectError::VerdictParseFailure {
                source,
                last_response: second,
            })?
        }
    };
    Ok(parsed
        .into_iter()
        .zip(ctx.query_ids())
        .map(|(v, id)| v.for_query(id))
        .collect())
}
