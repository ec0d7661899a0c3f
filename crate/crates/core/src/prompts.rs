//! Prompt templates for the Actor and the batch Reflector.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ReflectiveContext, ToolStep};

/// Reflector instruction block. `<<N>>` is replaced by the batch size.
pub const REFLECTOR_INSTRUCTION: &str = "You are a reflection agent to help refine the answers. Here are <<N>> questions, each with the previous model's answer.
For each, critique the model answer for accuracy, completeness, and reasoning, comparing across all answers and their reasoning paths in the batch to identify areas for improvement and give a peer confidence score to quantify how possible the answer is correct.
Make sure you understand each question-answer pair and give detailed explanations to them, Carefully decide if a reevaluation is needed for each case.
For each, provide: (1) whether to trigger reevaluation (true/false) and improve answer, (2) summary assessment, (3) peer confidence score for the current answer(0.0-1.0), (4) suggestions for improvement(empty if reevaluation is false).
Output a JSON list, one entry per question, strictly in format:
\"response:{trigger_reevaluation: bool, summary_comment: str, confidence_score: float(0.0-1.0), suggestions: str}]\"";

/// Per-item block. Placeholders: `{index}`, `{question}`, `{answer}`,
/// `{rationale}`, `{trajectory}`.
pub const REFLECTOR_ITEM: &str = "Question {index}:
{question}
Model answer: {answer}
Reasoning: {rationale}
{trajectory}";

pub const BATCH_SIZE_PLACEHOLDER: &str = "<<N>>";

/// Single-pass `{name}` substitution. Unknown names and unmatched braces are
/// copied through, and substituted values are never re-scanned.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let hit = after.find('}').and_then(|end| {
            let name = &after[..end];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (end, *v))
        });
        match hit {
            Some((end, value)) => {
                out.push_str(value);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("item template is missing the {0} placeholder")]
    MissingPlaceholder(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectorPromptTemplate {
    pub instruction: String,
    pub item: String,
}

impl Default for ReflectorPromptTemplate {
    fn default() -> Self {
        Self {
            instruction: REFLECTOR_INSTRUCTION.into(),
            item: REFLECTOR_ITEM.into(),
        }
    }
}

/// A rendered joint-evaluation prompt: the instruction block goes out once as
/// the system message, the item blocks together as one user message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReflectorPrompt {
    pub instruction: String,
    pub items: String,
    pub item_count: usize,
}

fn format_trajectory(steps: &[ToolStep]) -> String {
    if steps.is_empty() {
        return String::new();
    }
    let mut s = String::from("Tool calls:");
    for step in steps {
        s.push_str(&format!(
            "\n- {}({}) -> {}",
            step.tool_name, step.arguments, step.observation
        ));
    }
    s
}

impl ReflectorPromptTemplate {
    pub fn validate(&self) -> Result<(), TemplateError> {
        for name in ["{index}", "{question}", "{answer}"] {
            if !self.item.contains(name) {
                return Err(TemplateError::MissingPlaceholder(name));
            }
        }
        Ok(())
    }

    pub fn instruction_for(&self, n: usize) -> String {
        self.instruction
            .replace(BATCH_SIZE_PLACEHOLDER, &format!("{n}"))
    }

    pub fn render_item(&self, index: usize, question: &str, answer: &str, rationale: &str, trajectory: &[ToolStep]) -> String {
        let idx = format!("{index}");
        let traj = format_trajectory(trajectory);
        let block = fill(
            &self.item,
            &[
                ("index", &idx),
                ("question", question),
                ("answer", answer),
                ("rationale", rationale),
                ("trajectory", &traj),
            ],
        );
        String::from(block.trim_end())
    }

    /// Render the context; items are numbered 1..N in batch order.
    pub fn render(&self, ctx: &ReflectiveContext) -> ReflectorPrompt {
        let blocks: Vec<String> = ctx
            .entries
            .iter()
            .enumerate()
            .map(|(i, (q, o))| {
                self.render_item(i + 1, &q.display_text(), &o.answer, &o.rationale, &o.trajectory)
            })
            .collect();
        ReflectorPrompt {
            instruction: self.instruction_for(ctx.len()),
            items: blocks.join("\n\n"),
            item_count: ctx.len(),
        }
    }
}

/// How the Actor is asked to state its final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AnswerFormat {
    /// A single JSON object; the answer lives under `answer_key`.
    Json { answer_key: String },
    /// A final `ANSWER: <label>` line, optionally followed by `CONFIDENCE: x`.
    Line,
}

pub const CHOICE_INSTRUCTION: &str = "You are an expert problem solver. Read the question and the options carefully and reason step by step. You may call the available tools when they help, but avoid unnecessary calls.
When you are done, end your response with a line of the form
ANSWER: <option label>
followed by a line of the form
CONFIDENCE: <number between 0.0 and 1.0>";

pub const JSON_INSTRUCTION: &str = "Follow the task instructions in the user message. You may call the available tools when they help, but avoid unnecessary calls. Your final response must be a single JSON object with the requested keys.";

pub const FEEDBACK_HEADER: &str = "Reflector feedback";

pub const FORCE_ANSWER: &str = "You have reached the maximum number of tool calls. Do not call any more tools. Give your final answer now in the required format.";

/// Actor-side prompt set for one dataset schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorPrompt {
    pub system: String,
    pub format: AnswerFormat,
}

impl ActorPrompt {
    pub fn choice() -> Self {
        Self {
            system: CHOICE_INSTRUCTION.into(),
            format: AnswerFormat::Line,
        }
    }

    pub fn json(answer_key: impl Into<String>) -> Self {
        Self {
            system: JSON_INSTRUCTION.into(),
            format: AnswerFormat::Json {
                answer_key: answer_key.into(),
            },
        }
    }

    /// User message carrying Reflector feedback into the next round.
    pub fn feedback_message(critique: &str) -> String {
        format!("{FEEDBACK_HEADER}:\n{critique}\n\nRevise your answer taking this feedback into account.")
    }

    pub fn repair_message(&self) -> String {
        match &self.format {
            AnswerFormat::Json { answer_key } => format!(
                "Your previous response could not be parsed. Emit valid JSON only: a single JSON object containing the key \"{answer_key}\" and nothing else outside it."
            ),
            AnswerFormat::Line => String::from(
                "Your previous response did not contain a final answer line. Reply with a line of the form ANSWER: <option label> followed by CONFIDENCE: <0.0-1.0>.",
            ),
        }
    }
}

/// System prompt for seller fraud assessment. Placeholders are the
/// upper-case field names between triple backticks.
pub const FRAUD_SELLER_PROMPT: &str = "You are a risk analyst expert working for an e-commerce company.
Your job is to protect the platform and its customers by identifying fraudulent sellers. A fraudulent seller might engage in fraudulent activities, sell counterfeit goods, misrepresent products, or provide poor customer service.
Your task is to conduct a holistic assessment based on the seller's profile and the sample product of the seller.

You are provided with the seller's shop name, company name (some sellers may not have) and email domain, enclosed in triple backticks:

- shop name: ```SHOP_NAME```
- company name: ```COMPANY_NAME```
- email domain: ```EMAIL_DOMAIN```

You are also given the categories of products sold by the seller, enclosed in triple backticks:

- product categories: ```PRODUCT_CATEGORY```

You are also given the sample product of the seller, enclosed in triple backticks:

- product_name: ```PRODUCT_NAME```
- product_description: ```PRODUCT_DESCRIPTION```
- detailed_subcategory: ```DETAILED_SUBCATEGORY```
- detailed_category: ```DETAILED_CATEGORY```
- min_list_price_usd: ```MIN_LIST_PRICE_USD```
- max_list_price_usd: ```MAX_LIST_PRICE_USD```

Note: you can use provided tools many times until you think the collected information is sufficient to answer the questions, but do avoid unnecessary tool calls.

Based on the information provided and collected by tools, answer the following questions:

1. **Shop/Company Name Verification:** Based on the shop name and company name, does this appear to be a reliable/established seller?
    - If names seem generic, suspicious, or unfamiliar, search for the company/shop name to verify legitimacy
    - Note: Only use search results if they are clearly relevant to the specific shop or company name

2. **Email Domain Assessment:** Based on the email domain, does this suggest a professional business?
    - If using unfamiliar business domains, consider searching to check if it belongs to an established company
    - Note: Only use search results if they are clearly relevant to the email domain

3. **Product Information Check:** Based on the sample product name, description and the product categories, do you think it is reasonable for the seller to sell the products in the shop?

4. **Product Price Verification:** Does the product pricing seem reasonable for the category?
    - If pricing appears suspiciously low or high, search for typical market prices of similar products

5. Based on all the information, do you think this seller is a fraudulent seller?
Assign a confidence score: rate your confidence in the assessment.

Return your response in a single JSON object with the following keys:

-   `is_fraudulent_shop`: (boolean) `true` if the shop exhibits indicators of fraudulent operations, otherwise `false`.
-   `confidence_score`: (float) A score from 0.0 to 1.0 indicating your confidence in the assessment.
-   `summary_reasoning`: (string) Comprehensive explanation of your fraud assessment, including all factors that led to your conclusion.";

/// Dataset field → placeholder in [`FRAUD_SELLER_PROMPT`].
pub const FRAUD_FIELDS: [(&str, &str); 10] = [
    ("shop_name", "SHOP_NAME"),
    ("company_name", "COMPANY_NAME"),
    ("email_domain", "EMAIL_DOMAIN"),
    ("product_categories", "PRODUCT_CATEGORY"),
    ("product_name", "PRODUCT_NAME"),
    ("product_description", "PRODUCT_DESCRIPTION"),
    ("detailed_subcategory", "DETAILED_SUBCATEGORY"),
    ("detailed_category", "DETAILED_CATEGORY"),
    ("minimum_list_price_in_USD", "MIN_LIST_PRICE_USD"),
    ("maximum_list_price_in_USD", "MAX_LIST_PRICE_USD"),
];

/// Fill the seller prompt from field values; missing fields render empty.
pub fn render_fraud_prompt(fields: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(FRAUD_SELLER_PROMPT.len() + 256);
    let mut rest = FRAUD_SELLER_PROMPT;
    const FENCE: &str = "```";
    while let Some(open) = rest.find(FENCE) {
        let inner = &rest[open + FENCE.len()..];
        let Some(close) = inner.find(FENCE) else { break };
        let placeholder = &inner[..close];
        out.push_str(&rest[..open + FENCE.len()]);
        match FRAUD_FIELDS.iter().find(|(_, p)| *p == placeholder) {
            Some((field, _)) => out.push_str(fields.get(*field).map(String::as_str).unwrap_or("")),
            None => out.push_str(placeholder),
        }
        out.push_str(FENCE);
        rest = &inner[close + FENCE.len()..];
    }
    out.push_str(rest);
    out
}
