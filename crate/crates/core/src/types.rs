//! Domain values shared by every stage of the pipeline.
//!
//! All types here are plain immutable data: they are `Send + Sync`, cheap to
//! clone, and round-trip through the JSON report format unchanged.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::TokenUsage;

/// One labeled option of a multiple-choice query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

/// A single task instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<Choice>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl Query {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            choices: None,
            gold: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold = Some(gold.into());
        self
    }

    pub fn with_choices<I, L, T>(mut self, choices: I) -> Self
    where
        I: IntoIterator<Item = (L, T)>,
        L: Into<String>,
        T: Into<String>,
    {
        self.choices = Some(
            choices
                .into_iter()
                .map(|(label, text)| Choice {
                    label: label.into(),
                    text: text.into(),
                })
                .collect(),
        );
        self
    }

    /// Prompt text followed by the labeled options, if any.
    pub fn display_text(&self) -> String {
        let mut out = self.prompt.clone();
        if let Some(choices) = &self.choices {
            out.push_str("\n\nOptions:");
            for c in choices {
                out.push('\n');
                out.push_str(&c.label);
                out.push_str(". ");
                out.push_str(&c.text);
            }
        }
        out
    }
}

/// One executed tool invocation inside an Actor trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolStep {
    pub tool_name: String,
    pub arguments: String,
    pub observation: String,
}

/// What the Actor produced for one query in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorOutput {
    pub query_id: String,
    pub answer: String,
    /// Opaque reasoning text.
    pub rationale: String,
    pub trajectory: Vec<ToolStep>,
    pub usage: TokenUsage,
    pub round: u32,
    /// Confidence the Actor itself verbalized, when its output carried one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbalized_confidence: Option<f64>,
}

/// Reflector judgement for one batch entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionVerdict {
    pub query_id: String,
    pub reevaluate: bool,
    /// Always within `[0, 1]`.
    pub confidence: f64,
    /// Actionable suggestions; may be empty when `reevaluate` is false.
    pub critique: String,
    pub summary: String,
}

impl ReflectionVerdict {
    /// Text handed back to the Actor: the critique, or the summary when the
    /// Reflector left the suggestions empty.
    pub fn feedback(&self) -> &str {
        if self.critique.trim().is_empty() {
            &self.summary
        } else {
            &self.critique
        }
    }
}

/// The shared context evaluated jointly by the Reflector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectiveContext {
    pub entries: Vec<(Query, ActorOutput)>,
    pub round: u32,
}

impl ReflectiveContext {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn query_ids(&self) -> Vec<String> {
        self.entries.iter().map(|(q, _)| q.id.clone()).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContextError {
    #[error("batch is empty")]
    Empty,
    #[error("{queries} queries but {outputs} actor outputs")]
    SizeMismatch { queries: usize, outputs: usize },
    #[error("output at position {index} belongs to {found}, expected {expected}")]
    Misaligned {
        index: usize,
        expected: String,
        found: String,
    },
}

/// Pair queries with their current outputs, preserving batch order.
pub fn build_context(
    queries: &[Query],
    outputs: &[ActorOutput],
    round: u32,
) -> Result<ReflectiveContext, ContextError> {
    if queries.len() != outputs.len() {
        return Err(ContextError::SizeMismatch {
            queries: queries.len(),
            outputs: outputs.len(),
        });
    }
    if queries.is_empty() {
        return Err(ContextError::Empty);
    }
    for (index, (q, o)) in queries.iter().zip(outputs).enumerate() {
        if q.id != o.query_id {
            return Err(ContextError::Misaligned {
                index,
                expected: q.id.clone(),
                found: o.query_id.clone(),
            });
        }
    }
    Ok(ReflectiveContext {
        entries: queries.iter().cloned().zip(outputs.iter().cloned()).collect(),
        round,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalizedReason {
    /// The Reflector stopped asking for re-evaluation.
    Accepted,
    /// Still flagged when the round budget ran out.
    RoundCap,
    /// The Actor failed; the last known answer is kept with confidence 0.
    ActorError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub query_id: String,
    pub answer: String,
    pub confidence: f64,
    pub rounds_used: u32,
    pub finalized_reason: FinalizedReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BatchError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("query id is empty at position {0}")]
    EmptyId(usize),
    #[error("duplicate query id {0:?}")]
    DuplicateId(String),
    #[error("gold label of {0:?} is not one of its choices")]
    GoldNotInChoices(String),
}

/// Check every [`Query`] invariant and pairwise id uniqueness.
pub fn validate_batch(batch: &[Query]) -> Result<(), BatchError> {
    if batch.is_empty() {
        return Err(BatchError::EmptyBatch);
    }
    let mut seen = BTreeSet::new();
    for (i, q) in batch.iter().enumerate() {
        if q.id.is_empty() {
            return Err(BatchError::EmptyId(i));
        }
        if !seen.insert(q.id.as_str()) {
            return Err(BatchError::DuplicateId(q.id.clone()));
        }
        if let (Some(choices), Some(gold)) = (&q.choices, &q.gold) {
            let gold = normalize_label(gold);
            if !choices.iter().any(|c| normalize_label(&c.label) == gold) {
                return Err(BatchError::GoldNotInChoices(q.id.clone()));
            }
        }
    }
    Ok(())
}

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize_label(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for ch in word.chars() {
            out.extend(ch.to_lowercase());
        }
    }
    out
}

/// Exact match after [`normalize_label`].
pub fn labels_match(answer: &str, gold: &str) -> bool {
    normalize_label(answer) == normalize_label(gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn q(id: &str) -> Query {
        Query::new(id, "prompt")
    }

    fn out(id: &str) -> ActorOutput {
        ActorOutput {
            query_id: id.into(),
            answer: "A".into(),
            rationale: "r".into(),
            trajectory: vec![],
            usage: TokenUsage::default(),
            round: 1,
            verbalized_confidence: None,
        }
    }

    #[test]
    fn validate_accepts_distinct_ids() {
        assert_eq!(validate_batch(&[q("a"), q("b")]), Ok(()));
    }

    #[test]
    fn validate_rejects_duplicates() {
        assert_eq!(
            validate_batch(&[q("a"), q("a")]),
            Err(BatchError::DuplicateId("a".into()))
        );
    }

    #[test]
    fn validate_rejects_empty() {
        assert_eq!(validate_batch(&[]), Err(BatchError::EmptyBatch));
        assert_eq!(validate_batch(&[q("")]), Err(BatchError::EmptyId(0)));
    }

    #[test]
    fn gold_must_be_a_choice() {
        let ok = q("a").with_choices([("A", "x"), ("B", "y")]).with_gold("b ");
        assert_eq!(validate_batch(&[ok]), Ok(()));
        let bad = q("a").with_choices([("A", "x"), ("B", "y")]).with_gold("C");
        assert_eq!(
            validate_batch(&[bad]),
            Err(BatchError::GoldNotInChoices("a".into()))
        );
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_label("  Hello \t World "), "hello world");
        assert!(labels_match("A ", "a"));
        assert!(!labels_match("A", "B"));
    }

    #[test]
    fn context_preserves_order() {
        let qs = [q("a"), q("b"), q("c"), q("d")];
        let os = [out("a"), out("b"), out("c"), out("d")];
        let ctx = build_context(&qs, &os, 1).unwrap();
        assert_eq!(ctx.query_ids(), ["a", "b", "c", "d"]);

        let single = build_context(&qs[..1], &os[..1], 1).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn context_size_mismatch() {
        let qs = [q("a"), q("b"), q("c")];
        let os = [out("a"), out("b")];
        assert_eq!(
            build_context(&qs, &os, 1),
            Err(ContextError::SizeMismatch {
                queries: 3,
                outputs: 2
            })
        );
        assert!(matches!(
            build_context(&qs[..2], &[out("b"), out("a")], 1),
            Err(ContextError::Misaligned { index: 0, .. })
        ));
    }

    #[test]
    fn display_text_lists_choices() {
        let q = q("a").with_choices([("A", "yes"), ("B", "no")]);
        assert_eq!(q.display_text(), "prompt\n\nOptions:\nA. yes\nB. no");
    }
}
