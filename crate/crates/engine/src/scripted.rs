//! Deterministic backend that replays a JSON script.
//!
//! Responses are keyed by lane (`actor:<id>` or `reflector:<id1>,<id2>,...`)
//! and by how many calls that lane has already seen, so concurrent callers
//! get the same answers regardless of interleaving.
//!
//! ```json
//! {
//!   "lanes": {
//!     "actor:q2": [{"reply": "ANSWER: A"}, {"reply": "ANSWER: B"}],
//!     "reflector:q1,q2": [{"judge": {"flag": ["q2"]}}, {"accept_all": {}}]
//!   },
//!   "defaults": {
//!     "actor": [{"reply": "ANSWER: {query_id}", "usage": {"input_tokens": 10, "output_tokens": 5}}],
//!     "reflector": [{"accept_all": {"confidence": 0.9}}]
//!   },
//!   "embeddings": {"some text": [1.0, 0.0]},
//!   "embedding_fallback": {"hashed": {"dim": 64}},
//!   "tools": {"search": {"x": "obs", "*": "nothing found"}}
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use bot_core::chat::{ChatRequest, ChatResponse, EmbeddingVector, ToolCall};
use bot_core::prompts::fill;
use bot_core::{Role, TokenUsage};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backend::{check_dims, count_words, fnv1a, request_words, BackendError, ChatBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Plain text; `{query_id}` and `{round}` are substituted.
    Reply(String),
    ToolCall { name: String, arguments: String },
    /// Explicit verdict list, rendered as the reflector JSON contract.
    Verdicts(Vec<VerdictSpec>),
    /// One verdict per item of the request; ids in `flag` ask for re-evaluation.
    Judge(JudgeSpec),
    /// `judge` with nothing flagged.
    AcceptAll(AcceptSpec),
    Error { status: u16, body: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSpec {
    pub reevaluate: bool,
    pub confidence: f64,
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub suggestions: String,
}

fn default_accept() -> f64 {
    0.9
}

fn default_flagged() -> f64 {
    0.3
}

fn default_suggestion() -> String {
    "Re-check the reasoning against the question.".into()
}

fn default_summary() -> String {
    "Looks consistent.".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSpec {
    #[serde(default)]
    pub flag: Vec<String>,
    #[serde(default = "default_accept")]
    pub confidence: f64,
    #[serde(default = "default_flagged")]
    pub flag_confidence: f64,
    #[serde(default = "default_summary")]
    pub summary: String,
    #[serde(default = "default_suggestion")]
    pub suggestion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptSpec {
    #[serde(default = "default_accept")]
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(flatten)]
    pub kind: StepKind,
    /// Reported usage; when absent it is the word count of the request and
    /// of the response.
    #[serde(default)]
    pub usage: Option<TokenUsage>,
}

impl ScriptStep {
    pub fn reply(text: impl Into<String>) -> Self {
        Self {
            kind: StepKind::Reply(text.into()),
            usage: None,
        }
    }

    pub fn with_usage(mut self, input_tokens: u64, output_tokens: u64) -> Self {
        self.usage = Some(TokenUsage::new(input_tokens, output_tokens));
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleDefaults {
    #[serde(default)]
    pub actor: Vec<ScriptStep>,
    #[serde(default)]
    pub reflector: Vec<ScriptStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingFallback {
    /// Hashed bag of lowercase words.
    Hashed { dim: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub lanes: BTreeMap<String, Vec<ScriptStep>>,
    #[serde(default)]
    pub defaults: RoleDefaults,
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub embedding_fallback: Option<EmbeddingFallback>,
    /// Tool name -> arguments -> observation; `*` matches any arguments.
    #[serde(default)]
    pub tools: BTreeMap<String, BTreeMap<String, String>>,
}

/// One served call, for assertions about call order and prompt content.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub lane: String,
    pub role: Role,
    pub round: u32,
    /// Zero-based position within the lane.
    pub lane_call: usize,
    pub request: ChatRequest,
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    script: Script,
    counters: Mutex<BTreeMap<String, usize>>,
    log: Mutex<Vec<CallRecord>>,
}

fn hashed_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim.max(1)];
    for word in text.split_whitespace() {
        let word: String = word
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        if word.is_empty() {
            continue;
        }
        let h = fnv1a(word.as_bytes());
        let len = v.len() as u64;
        v[(h % len) as usize] += 1.0;
    }
    v
}

fn verdict_json(entries: impl Iterator<Item = (bool, f64, String, String)>) -> String {
    let list: Vec<serde_json::Value> = entries
        .map(|(r, u, summary, suggestions)| {
            json!({
                "trigger_reevaluation": r,
                "summary_comment": summary,
                "confidence_score": u,
                "suggestions": suggestions,
            })
        })
        .collect();
    serde_json::to_string(&list).expect("json values serialize")
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text).map_err(|e| BackendError::Script(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    /// Every call served so far, in the order they were served.
    pub fn calls(&self) -> Vec<CallRecord> {
        self.log.lock().expect("log lock poisoned").clone()
    }

    pub fn calls_for(&self, lane: &str) -> Vec<CallRecord> {
        self.calls().into_iter().filter(|c| c.lane == lane).collect()
    }

    pub fn call_count(&self, role: Role) -> usize {
        self.log.lock().expect("log lock poisoned").iter().filter(|c| c.role == role).count()
    }

    fn step_for(&self, lane: &str, role: Role, n: usize) -> Result<&ScriptStep, BackendError> {
        let list = match self.script.lanes.get(lane) {
            Some(l) if !l.is_empty() => l,
            _ => match role {
                Role::Actor => &self.script.defaults.actor,
                Role::Reflector => &self.script.defaults.reflector,
            },
        };
        list.get(n.min(list.len().saturating_sub(1)))
            .ok_or_else(|| BackendError::Script(format!("no step for lane {lane}")))
    }

    fn render(&self, step: &ScriptStep, request: &ChatRequest, n: usize) -> Result<ChatResponse, BackendError> {
        let ids = &request.tag.query_ids;
        let (content, tool_call) = match &step.kind {
            StepKind::Reply(text) => {
                let round = request.tag.round.to_string();
                let qid = ids.first().map(String::as_str).unwrap_or("");
                (fill(text, &[("query_id", qid), ("round", &round)]), None)
            }
            StepKind::ToolCall { name, arguments } => (
                String::new(),
                Some(ToolCall {
                    id: format!("call_{n}"),
                    name: name.clone(),
                    arguments: arguments.clone(),
                }),
            ),
            StepKind::Verdicts(list) => (
                verdict_json(
                    list.iter()
                        .map(|v| (v.reevaluate, v.confidence, v.summary.clone(), v.suggestions.clone())),
                ),
                None,
            ),
            StepKind::Judge(j) => (
                verdict_json(ids.iter().map(|id| {
                    if j.flag.contains(id) {
                        (true, j.flag_confidence, j.summary.clone(), j.suggestion.clone())
                    } else {
                        (false, j.confidence, j.summary.clone(), String::new())
                    }
                })),
                None,
            ),
            StepKind::AcceptAll(a) => (
                verdict_json(ids.iter().map(|_| (false, a.confidence, default_summary(), String::new()))),
                None,
            ),
            StepKind::Error { status, body } => {
                return Err(BackendError::Provider {
                    status: *status,
                    body: body.clone(),
                })
            }
        };
        let usage = step.usage.unwrap_or_else(|| {
            let out = count_words(&content)
                + tool_call
                    .as_ref()
                    .map_or(0, |c: &ToolCall| count_words(&c.name) + count_words(&c.arguments));
            TokenUsage::new(request_words(request), out)
        });
        Ok(ChatResponse {
            content,
            tool_call,
            usage,
        })
    }
}

impl ChatBackend for ScriptedBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let lane = request.tag.lane();
        let n = {
            let mut counters = self.counters.lock().expect("counter lock poisoned");
            let c = counters.entry(lane.clone()).or_insert(0);
            let n = *c;
            *c += 1;
            n
        };
        self.log.lock().expect("log lock poisoned").push(CallRecord {
            lane: lane.clone(),
            role: request.tag.role,
            round: request.tag.round,
            lane_call: n,
            request: request.clone(),
        });
        let step = self.step_for(&lane, request.tag.role, n)?;
        self.render(step, request, n)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let out = texts
            .iter()
            .map(|t| {
                let values = match (self.script.embeddings.get(t), self.script.embedding_fallback) {
                    (Some(v), _) => v.clone(),
                    (None, Some(EmbeddingFallback::Hashed { dim })) => hashed_embedding(t, dim),
                    (None, None) => return Err(BackendError::Script(format!("no embedding for {t:?}"))),
                };
                EmbeddingVector::new(values).map_err(|e| BackendError::Script(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        check_dims(&out)?;
        Ok(out)
    }
}
