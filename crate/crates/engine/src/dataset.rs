//! JSONL dataset loaders.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use bot_core::prompts::{render_fraud_prompt, ActorPrompt, FRAUD_FIELDS};
use bot_core::types::{validate_batch, BatchError};
use bot_core::{Choice, Query};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Schema {
    /// `{id, question, choices, gold}`
    ChoiceQa,
    /// Seller profile plus one sample product, labelled `is_fraudulent_shop`.
    FraudSeller,
    /// `{id, text, label}` with label spam/ham.
    SmsSpam,
}

impl Schema {
    pub fn actor_prompt(self) -> ActorPrompt {
        match self {
            Schema::FraudSeller => ActorPrompt::json("is_fraudulent_shop"),
            Schema::ChoiceQa | Schema::SmsSpam => ActorPrompt::choice(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing field {field:?}")]
    MissingField { line: usize, field: String },
    #[error("line {line}: field {field:?}: {message}")]
    BadValue { line: usize, field: String, message: String },
    #[error(transparent)]
    Invalid(#[from] BatchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Require a gold label on every record.
    pub strict: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { strict: true }
    }
}

pub const SMS_INSTRUCTION: &str = "Classify the following SMS message as spam or ham.";

fn text_of(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

struct Record<'a> {
    line: usize,
    obj: &'a Map<String, Value>,
}

impl Record<'_> {
    fn first(&self, keys: &[&str]) -> Option<&Value> {
        keys.iter().find_map(|k| self.obj.get(*k).filter(|v| !v.is_null()))
    }

    fn text(&self, keys: &[&str]) -> Result<Option<String>, DatasetError> {
        match self.first(keys) {
            None => Ok(None),
            Some(v) => text_of(v).map(Some).ok_or_else(|| DatasetError::BadValue {
                line: self.line,
                field: keys[0].to_string(),
                message: "expected a string".into(),
            }),
        }
    }

    fn require(&self, keys: &[&str]) -> Result<String, DatasetError> {
        self.text(keys)?.ok_or_else(|| DatasetError::MissingField {
            line: self.line,
            field: keys[0].to_string(),
        })
    }

    fn gold(&self, keys: &[&str], strict: bool, map: impl Fn(&Value) -> Option<String>) -> Result<Option<String>, DatasetError> {
        match self.first(keys) {
            None if strict => Err(DatasetError::MissingField {
                line: self.line,
                field: keys[0].to_string(),
            }),
            None => Ok(None),
            Some(v) => map(v).map(Some).ok_or_else(|| DatasetError::BadValue {
                line: self.line,
                field: keys[0].to_string(),
                message: format!("unrecognized label {v}"),
            }),
        }
    }
}

fn label_for(i: usize) -> String {
    // A..Z, then AA, AB, ...
    let mut n = i;
    let mut s = Vec::new();
    loop {
        s.push(b'A' + (n % 26) as u8);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

fn parse_choices(rec: &Record<'_>) -> Result<Option<Vec<Choice>>, DatasetError> {
    let Some(v) = rec.first(&["choices", "options"]) else {
        return Ok(None);
    };
    let bad = |message: &str| DatasetError::BadValue {
        line: rec.line,
        field: "choices".into(),
        message: message.into(),
    };
    let choices = match v {
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, item)| match item {
                Value::Object(o) => {
                    let label = o.get("label").and_then(text_of).unwrap_or_else(|| label_for(i));
                    let text = o.get("text").and_then(text_of).ok_or_else(|| bad("choice object without text"))?;
                    Ok(Choice { label, text })
                }
                other => Ok(Choice {
                    label: label_for(i),
                    text: text_of(other).ok_or_else(|| bad("choice is not text"))?,
                }),
            })
            .collect::<Result<Vec<_>, DatasetError>>()?,
        Value::Object(o) => o
            .iter()
            .map(|(label, text)| {
                Ok(Choice {
                    label: label.clone(),
                    text: text_of(text).ok_or_else(|| bad("choice is not text"))?,
                })
            })
            .collect::<Result<Vec<_>, DatasetError>>()?,
        _ => return Err(bad("expected a list or an object")),
    };
    Ok(Some(choices))
}

fn choice_qa(rec: &Record<'_>, opts: LoadOptions) -> Result<Query, DatasetError> {
    let id = rec.require(&["id"])?;
    let prompt = rec.require(&["question", "prompt"])?;
    let choices = parse_choices(rec)?;
    let gold = rec.gold(&["gold", "answer"], opts.strict, text_of)?;
    let mut metadata = BTreeMap::new();
    for (k, v) in rec.obj {
        if !["id", "question", "prompt", "choices", "options", "gold", "answer"].contains(&k.as_str()) {
            if let Some(t) = text_of(v) {
                metadata.insert(k.clone(), t);
            }
        }
    }
    Ok(Query {
        id,
        prompt,
        choices,
        gold,
        metadata,
    })
}

fn spam_label(v: &Value) -> Option<String> {
    let s = match v {
        Value::Bool(true) => "spam",
        Value::Bool(false) => "ham",
        Value::Number(n) => match n.as_i64()? {
            1 => "spam",
            0 => "ham",
            _ => return None,
        },
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "spam" | "1" | "true" => "spam",
            "ham" | "0" | "false" => "ham",
            _ => return None,
        },
        _ => return None,
    };
    Some(s.to_string())
}

fn sms_spam(rec: &Record<'_>, opts: LoadOptions) -> Result<Query, DatasetError> {
    let id = rec.require(&["id"])?;
    let text = rec.require(&["text", "message", "sms"])?;
    let gold = rec.gold(&["label", "gold"], opts.strict, spam_label)?;
    let mut q = Query::new(id, format!("{SMS_INSTRUCTION}\n\nMessage: {text}")).with_choices([
        ("spam", "unsolicited, promotional or fraudulent message"),
        ("ham", "legitimate personal or service message"),
    ]);
    q.gold = gold;
    Ok(q)
}

fn fraud_label(v: &Value) -> Option<String> {
    let b = match v {
        Value::Bool(b) => *b,
        Value::Number(n) => match n.as_i64()? {
            1 => true,
            0 => false,
            _ => return None,
        },
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return None,
        },
        _ => return None,
    };
    Some(b.to_string())
}

/// Fields that may be absent (the seller has no registered company).
const FRAUD_OPTIONAL: [&str; 1] = ["company_name"];

fn fraud_seller(rec: &Record<'_>, opts: LoadOptions) -> Result<Query, DatasetError> {
    let mut fields = BTreeMap::new();
    for (field, _) in FRAUD_FIELDS {
        let value = if FRAUD_OPTIONAL.contains(&field) {
            rec.text(&[field])?.unwrap_or_default()
        } else {
            rec.require(&[field])?
        };
        fields.insert(field.to_string(), value);
    }
    let id = rec
        .text(&["id", "seller_id", "shop_id"])?
        .unwrap_or_else(|| format!("seller-{}", rec.line));
    let gold = rec.gold(&["is_fraudulent_shop"], opts.strict, fraud_label)?;
    let prompt = render_fraud_prompt(&fields);
    Ok(Query {
        id,
        prompt,
        choices: None,
        gold,
        metadata: fields,
    })
}

/// Parse JSONL text (one object per line; blank lines skipped).
pub fn parse_dataset(text: &str, schema: Schema, opts: LoadOptions) -> Result<Vec<Query>, DatasetError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| DatasetError::Parse {
            line,
            message: e.to_string(),
        })?;
        let Value::Object(obj) = &value else {
            return Err(DatasetError::Parse {
                line,
                message: "expected a JSON object".into(),
            });
        };
        let rec = Record { line, obj };
        out.push(match schema {
            Schema::ChoiceQa => choice_qa(&rec, opts)?,
            Schema::SmsSpam => sms_spam(&rec, opts)?,
            Schema::FraudSeller => fraud_seller(&rec, opts)?,
        });
    }
    validate_batch(&out)?;
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>, schema: Schema, opts: LoadOptions) -> Result<Vec<Query>, DatasetError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut text = String::new();
    for line in BufReader::new(File::open(path).map_err(io)?).lines() {
        text.push_str(&line.map_err(io)?);
        text.push('\n');
    }
    parse_dataset(&text, schema, opts)
}
