//! Extraction of structured output from free-form model text.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::prompts::AnswerFormat;
use crate::types::ReflectionVerdict;

/// Byte range of the first balanced `open`…`close` span starting at or
/// after `from`, honouring JSON string literals and escapes.
fn balanced_span(text: &str, from: usize, open: u8, close: u8) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    let start = from + bytes[from..].iter().position(|&b| b == open)?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            _ if b == open => depth += 1,
            _ if b == close => {
                depth -= 1;
                if depth == 0 {
                    return Some((start, i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// The first balanced span delimited by `open`/`close` that parses as JSON.
/// Prose before or after the JSON is ignored.
pub fn first_json(text: &str, open: u8, close: u8) -> Option<Value> {
    let mut from = 0;
    while from < text.len() {
        let Some((s, e)) = balanced_span(text, from, open, close) else {
            // an unbalanced opener may still precede a balanced one
            let next = text.as_bytes()[from..].iter().position(|&b| b == open)?;
            from += next + 1;
            continue;
        };
        if let Ok(v) = serde_json::from_str::<Value>(&text[s..e]) {
            return Some(v);
        }
        from = s + 1;
    }
    None
}

pub fn first_json_array(text: &str) -> Option<Vec<Value>> {
    match first_json(text, b'[', b']')? {
        Value::Array(items) => Some(items),
        _ => None,
    }
}

pub fn first_json_object(text: &str) -> Option<Map<String, Value>> {
    match first_json(text, b'{', b'}')? {
        Value::Object(map) => Some(map),
        _ => None,
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerdictParseError {
    #[error("reflector output is not a usable JSON list: {0}")]
    MalformedJson(String),
    #[error("reflector returned {got} verdicts, expected {expected}")]
    WrongCount { got: usize, expected: usize },
    #[error("expected verdict count must be at least 1")]
    BadExpected,
}

/// One verdict as read from the model, before it is bound to a query id.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedVerdict {
    pub reevaluate: bool,
    pub confidence: f64,
    /// The value the model actually wrote, before clamping.
    pub raw_confidence: f64,
    pub summary: String,
    pub suggestions: String,
}

impl ParsedVerdict {
    pub fn for_query(self, query_id: impl Into<String>) -> ReflectionVerdict {
        ReflectionVerdict {
            query_id: query_id.into(),
            reevaluate: self.reevaluate,
            confidence: self.confidence,
            critique: self.suggestions,
            summary: self.summary,
        }
    }
}

fn as_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Some(true),
            "false" | "no" | "0" => Some(false),
            _ => None,
        },
        Value::Number(n) => n.as_i64().map(|i| i != 0),
        _ => None,
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .filter(|x| x.is_finite())
}

fn as_text(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    }
}

/// Clamp to `[0, 1]`, logging values that needed it.
pub fn clamp_confidence(raw: f64) -> f64 {
    let c = raw.clamp(0.0, 1.0);
    if c != raw {
        log::warn!("confidence {raw} outside [0, 1]; clamped to {c}");
    }
    c
}

fn parse_entry(index: usize, entry: &Value) -> Result<ParsedVerdict, VerdictParseError> {
    let malformed = |what: &str| VerdictParseError::MalformedJson(format!("entry {}: {what}", index + 1));
    let mut obj = entry.as_object().ok_or_else(|| malformed("not an object"))?;
    // tolerate the `{"response": {...}}` wrapping the instruction block suggests
    if !obj.contains_key("trigger_reevaluation") {
        if let Some(Value::Object(inner)) = obj.get("response") {
            obj = inner;
        }
    }
    let reevaluate = obj
        .get("trigger_reevaluation")
        .and_then(as_bool)
        .ok_or_else(|| malformed("missing or invalid trigger_reevaluation"))?;
    let raw_confidence = obj
        .get("confidence_score")
        .and_then(as_f64)
        .ok_or_else(|| malformed("missing or invalid confidence_score"))?;
    Ok(ParsedVerdict {
        reevaluate,
        confidence: clamp_confidence(raw_confidence),
        raw_confidence,
        summary: as_text(obj.get("summary_comment")),
        suggestions: as_text(obj.get("suggestions")),
    })
}

/// Parse the Reflector's JSON list. Verdict `k` refers to batch entry `k`.
pub fn parse_verdicts(text: &str, expected_n: usize) -> Result<Vec<ParsedVerdict>, VerdictParseError> {
    if expected_n == 0 {
        return Err(VerdictParseError::BadExpected);
    }
    let items = first_json_array(text)
        .ok_or_else(|| VerdictParseError::MalformedJson("no JSON list found".into()))?;
    if items.len() != expected_n {
        return Err(VerdictParseError::WrongCount {
            got: items.len(),
            expected: expected_n,
        });
    }
    items.iter().enumerate().map(|(i, v)| parse_entry(i, v)).collect()
}

/// The Actor's final answer as read from its output.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    pub answer: String,
    pub rationale: String,
    pub confidence: Option<f64>,
}

const RATIONALE_KEYS: [&str; 5] = ["summary_reasoning", "rationale", "reasoning", "explanation", "summary"];
const CONFIDENCE_KEYS: [&str; 2] = ["confidence_score", "confidence"];

fn answer_from_json(text: &str, answer_key: &str) -> Option<ParsedAnswer> {
    let obj = first_json_object(text)?;
    let answer = match obj.get(answer_key).or_else(|| obj.get("answer"))? {
        Value::String(s) => s.trim().to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        _ => return None,
    };
    if answer.is_empty() {
        return None;
    }
    let rationale = RATIONALE_KEYS
        .iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str))
        .map(String::from)
        .unwrap_or_else(|| text.trim().to_string());
    let confidence = CONFIDENCE_KEYS
        .iter()
        .find_map(|k| obj.get(*k).and_then(as_f64))
        .map(clamp_confidence);
    Some(ParsedAnswer {
        answer,
        rationale,
        confidence,
    })
}

/// `KEY: value` on one line, tolerant of markdown emphasis and case.
fn keyed_line<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let l = line.trim().trim_start_matches(['*', '#', '-', ' ']);
    if !l.get(..key.len())?.eq_ignore_ascii_case(key) {
        return None;
    }
    let rest = l[key.len()..].trim_start_matches(['*', ' ']);
    let rest = rest.strip_prefix(':')?;
    Some(rest.trim().trim_matches(['*', '`']).trim())
}

fn clean_label(s: &str) -> String {
    let s = s.trim().trim_end_matches('.');
    let s = s
        .strip_prefix('(')
        .and_then(|x| x.strip_suffix(')'))
        .unwrap_or(s);
    s.trim().to_string()
}

fn answer_from_lines(text: &str) -> Option<ParsedAnswer> {
    let lines: Vec<&str> = text.lines().collect();
    let (idx, value) = lines
        .iter()
        .enumerate()
        .rev()
        .find_map(|(i, l)| keyed_line(l, "answer").map(|v| (i, v)))?;
    let answer = clean_label(value);
    if answer.is_empty() {
        return None;
    }
    let confidence = lines
        .iter()
        .rev()
        .find_map(|l| keyed_line(l, "confidence"))
        .and_then(|v| v.trim_end_matches('%').trim().parse::<f64>().ok())
        .filter(|x| x.is_finite())
        .map(clamp_confidence);
    let rationale = lines
        .iter()
        .enumerate()
        .filter(|(i, l)| *i != idx && keyed_line(l, "confidence").is_none())
        .map(|(_, l)| *l)
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string();
    Some(ParsedAnswer {
        answer,
        rationale,
        confidence,
    })
}

/// Extract the final answer in the requested format, falling back to the
/// other format when the preferred one is absent.
pub fn parse_actor_answer(text: &str, format: &AnswerFormat) -> Option<ParsedAnswer> {
    match format {
        AnswerFormat::Json { answer_key } => {
            answer_from_json(text, answer_key).or_else(|| answer_from_lines(text))
        }
        AnswerFormat::Line => answer_from_lines(text).or_else(|| answer_from_json(text, "answer")),
    }
}
