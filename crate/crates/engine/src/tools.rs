//! Tools the Actor may call.

use std::collections::BTreeMap;
use std::time::Duration;

use bot_core::chat::ToolSchema;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ToolError {
    #[error("tool {0:?} is not registered")]
    NotFound(String),
    #[error("tool {0:?} is already registered")]
    Duplicate(String),
    #[error("tool {name:?} failed: {message}")]
    Failed { name: String, message: String },
}

pub trait Tool: Send + Sync {
    fn schema(&self) -> ToolSchema;

    fn invoke(&self, arguments: &str) -> Result<String, ToolError>;
}

#[derive(Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Box<dyn Tool>>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, tool: impl Tool + 'static) -> Result<(), ToolError> {
        let name = tool.schema().name;
        if self.tools.contains_key(&name) {
            return Err(ToolError::Duplicate(name));
        }
        self.tools.insert(name, Box::new(tool));
        Ok(())
    }

    pub fn with(mut self, tool: impl Tool + 'static) -> Result<Self, ToolError> {
        self.register(tool)?;
        Ok(self)
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    /// Schemas in name order.
    pub fn schemas(&self) -> Vec<ToolSchema> {
        self.tools.values().map(|t| t.schema()).collect()
    }

    pub fn invoke(&self, name: &str, arguments: &str) -> Result<String, ToolError> {
        self.tools
            .get(name)
            .ok_or_else(|| ToolError::NotFound(name.to_string()))?
            .invoke(arguments)
    }

    /// Registry of [`StaticTool`]s from a name -> arguments -> observation table.
    pub fn from_tables(tables: &BTreeMap<String, BTreeMap<String, String>>) -> Self {
        let mut reg = Self::new();
        for (name, table) in tables {
            reg.tools.insert(
                name.clone(),
                Box::new(StaticTool::new(name.clone(), format!("scripted {name}"), table.clone())),
            );
        }
        reg
    }
}

/// Canned observations keyed by the exact argument string; `*` is the
/// fallback.
#[derive(Debug, Clone)]
pub struct StaticTool {
    name: String,
    description: String,
    table: BTreeMap<String, String>,
}

impl StaticTool {
    pub fn new(name: impl Into<String>, description: impl Into<String>, table: BTreeMap<String, String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            table,
        }
    }
}

impl Tool for StaticTool {
    fn schema(&self) -> ToolSchema {
        ToolSchema {
            name: self.name.clone(),
            description: self.description.clone(),
            parameters: None,
        }
    }

    fn invoke(&self, arguments: &str) -> Result<String, ToolError> {
        self.table
            .get(arguments)
            .or_else(|| self.table.get("*"))
            .cloned()
            .ok_or_else(|| ToolError::Failed {
                name: self.name.clone(),
                message: format!("no observation for {arguments:?}"),
            })
    }
}

/// Pull the query string out of tool arguments: a JSON object's `query`
/// or `input` field, or the raw text.
pub fn query_argument(arguments: &str) -> String {
    match serde_json::from_str::<Value>(arguments) {
        Ok(Value::Object(map)) => ["query", "input", "q"]
            .iter()
            .find_map(|k| map.get(*k).and_then(Value::as_str))
            .unwrap_or(arguments)
            .to_string(),
        Ok(Value::String(s)) => s,
        _ => arguments.to_string(),
    }
}

/// Web search over an HTTP GET endpoint. The observation is a compact
/// list of result titles and snippets when the body looks like a search
/// API response, else the raw body, truncated.
pub struct HttpSearchTool {
    pub name: String,
    pub endpoint: String,
    pub query_param: String,
    /// Header carrying the credential, e.g. `X-Subscription-Token`.
    pub auth_header: Option<(String, String)>,
    pub max_chars: usize,
    pub max_results: usize,
    agent: ureq::Agent,
}

impl HttpSearchTool {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            endpoint: endpoint.into(),
            query_param: "q".into(),
            auth_header: None,
            max_chars: 2000,
            max_results: 5,
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
        }
    }
}

fn summarize_results(body: &Value, max_results: usize) -> Option<String> {
    let results = body
        .pointer("/web/results")
        .or_else(|| body.get("results"))
        .and_then(Value::as_array)?;
    let lines: Vec<String> = results
        .iter()
        .take(max_results)
        .map(|r| {
            let field = |k: &str| r.get(k).and_then(Value::as_str).unwrap_or("");
            let snippet = [field("description"), field("snippet"), field("content")]
                .into_iter()
                .find(|s| !s.is_empty())
                .unwrap_or("");
            format!("- {} ({}): {}", field("title"), field("url"), snippet)
        })
        .collect();
    Some(lines.join("\n"))
}

fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

impl Tool for HttpSearchTool {
    fn schema(&self) -> ToolSchema {
        ToolSchema {
            name: self.name.clone(),
            description: "Search the web and return summarized results.".into(),
            parameters: Some(serde_json::json!({
                "type": "object",
                "properties": {"query": {"type": "string", "description": "search terms"}},
                "required": ["query"],
            })),
        }
    }

    fn invoke(&self, arguments: &str) -> Result<String, ToolError> {
        let fail = |message: String| ToolError::Failed {
            name: self.name.clone(),
            message,
        };
        let mut req = self
            .agent
            .get(&self.endpoint)
            .query(&self.query_param, &query_argument(arguments));
        if let Some((header, value)) = &self.auth_header {
            req = req.set(header, value);
        }
        let body = req
            .call()
            .map_err(|e| fail(e.to_string()))?
            .into_string()
            .map_err(|e| fail(e.to_string()))?;
        let text = serde_json::from_str::<Value>(&body)
            .ok()
            .and_then(|v| summarize_results(&v, self.max_results))
            .unwrap_or(body);
        Ok(truncate_chars(&text, self.max_chars))
    }
}
