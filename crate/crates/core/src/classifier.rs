//! Actionable-intent classification.
//!
//! Maps the channel state plus the newest message to an ordered list of
//! [`Classification`]s (highest confidence first). Two backends exist: the
//! deterministic [`RuleSet`] and any [`CompletionBackend`] driven by the
//! classifier prompt, whose replies are schema-checked by
//! [`validate_classifier_output`].
//!
//! [`CompletionBackend`]: crate::backend::CompletionBackend

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use tracing::warn;

use crate::backend::{extract_json, BackendHandle};
use crate::model::{ActionType, IntentTuple, Message, MessageCategory, ProjectState, WorkflowKind};
use crate::prompts::{PromptKind, PromptPack, PromptSlots};
use crate::text;
use crate::workflow::{SUMMARY_FIELDS, TASK_FIELDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub category: MessageCategory,
    pub confidence: f64,
    pub explanation: String,
    pub action: ActionType,
    #[serde(default)]
    pub is_cross_talk: bool,
}

impl Classification {
    pub fn new(category: MessageCategory, action: ActionType, explanation: impl Into<String>) -> Self {
        Self {
            category,
            confidence: 1.0,
            explanation: explanation.into(),
            action,
            is_cross_talk: false,
        }
    }

    pub fn cross_talk(mut self, flag: bool) -> Self {
        self.is_cross_talk = flag;
        self
    }

    pub fn intent(&self) -> IntentTuple {
        IntentTuple::new(self.category, self.action)
    }
}

/// Field-level reason a classifier reply was rejected.
#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize)]
#[error("schema violation at `{field}`: {reason}")]
pub struct SchemaViolation {
    pub field: String,
    pub reason: String,
}

impl SchemaViolation {
    fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error(transparent)]
    Schema(#[from] SchemaViolation),
    #[error("classifier failed after retry: {0}")]
    Failure(String),
}

/// Parses and checks a classifier reply.
///
/// Accepts one object or a list of objects, optionally wrapped in prose or
/// code fences. `is_cross_talk` may be omitted (defaults to false);
/// action names are case-insensitive.
pub fn validate_classifier_output(raw: &str) -> Result<Vec<Classification>, SchemaViolation> {
    let value = extract_json(raw).ok_or_else(|| SchemaViolation::new("$", "no JSON object or list found"))?;
    match value {
        Value::Object(obj) => Ok(vec![validate_object(&obj, "")?]),
        Value::Array(items) => {
            if items.is_empty() {
                return Err(SchemaViolation::new("$", "empty classification list"));
            }
            items
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    let prefix = format!("[{i}].");
                    match item {
                        Value::Object(obj) => validate_object(obj, &prefix),
                        _ => Err(SchemaViolation::new(format!("[{i}]"), "expected an object")),
                    }
                })
                .collect()
        }
        _ => Err(SchemaViolation::new("$", "expected an object or a list")),
    }
}

fn validate_object(obj: &Map<String, Value>, prefix: &str) -> Result<Classification, SchemaViolation> {
    let path = |f: &str| format!("{prefix}{f}");
    let string_field = |f: &str| -> Result<&str, SchemaViolation> {
        match obj.get(f) {
            Some(Value::String(s)) => Ok(s.as_str()),
            Some(_) => Err(SchemaViolation::new(path(f), "expected a string")),
            None => Err(SchemaViolation::new(path(f), "missing required field")),
        }
    };

    let category = string_field("category")?
        .parse::<MessageCategory>()
        .map_err(|e| SchemaViolation::new(path("category"), e.to_string()))?;
    let action = string_field("action")?
        .parse::<ActionType>()
        .map_err(|e| SchemaViolation::new(path("action"), e.to_string()))?;
    let confidence = match obj.get("confidence") {
        Some(Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
        Some(_) => return Err(SchemaViolation::new(path("confidence"), "expected a number")),
        None => return Err(SchemaViolation::new(path("confidence"), "missing required field")),
    };
    if !(0.0..=1.0).contains(&confidence) {
        return Err(SchemaViolation::new(
            path("confidence"),
            format!("{confidence} outside [0, 1]"),
        ));
    }
    let explanation = string_field("explanation")?.trim();
    if explanation.is_empty() {
        return Err(SchemaViolation::new(path("explanation"), "must not be empty"));
    }
    let is_cross_talk = match obj.get("is_cross_talk") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(SchemaViolation::new(path("is_cross_talk"), "expected a boolean")),
    };
    Ok(Classification {
        category,
        confidence,
        explanation: explanation.to_string(),
        action,
        is_cross_talk,
    })
}

/// Stable sort, highest confidence first.
pub fn order_by_confidence(list: &mut [Classification]) {
    list.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
}

/// A fixed phrase that maps straight to one or more intent labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseRule {
    /// Case-insensitive substring.
    pub contains: String,
    pub labels: Vec<IntentTuple>,
}

/// Configuration of the deterministic rule backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    #[serde(default = "default_new_task_triggers")]
    pub new_task_triggers: Vec<String>,
    /// Checked before every other rule.
    #[serde(default)]
    pub phrase_rules: Vec<PhraseRule>,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self {
            new_task_triggers: default_new_task_triggers(),
            phrase_rules: Vec::new(),
        }
    }
}

fn default_new_task_triggers() -> Vec<String> {
    [
        "new bug",
        "new task",
        "feature request",
        "we should add",
        "we should build",
        "we need to add",
        "we need to build",
        "can we add",
        "create a task",
        "add a task",
        "track this",
        "should be tracked",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

impl RuleSet {
    pub fn with_phrase(mut self, contains: &str, labels: &[IntentTuple]) -> Self {
        self.phrase_rules.push(PhraseRule {
            contains: contains.to_string(),
            labels: labels.to_vec(),
        });
        self
    }
}

static SUMMARY_WORDS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(summary|summaries|standup|stand-up)\b").unwrap());

/// Deterministic classification. Always returns at least one element and
/// every confidence is 1.0.
pub fn rule_classify(state: &ProjectState, message: &Message, rules: &RuleSet) -> Vec<Classification> {
    use ActionType as A;
    use MessageCategory as C;

    let content = message.content.as_str();
    let lower = content.to_lowercase();
    let cross_talk = text::is_cross_talk(content);

    for rule in &rules.phrase_rules {
        if !rule.labels.is_empty() && lower.contains(&rule.contains.to_lowercase()) {
            return rule
                .labels
                .iter()
                .map(|t| {
                    Classification::new(t.category, t.action, format!("configured phrase `{}`", rule.contains))
                        .cross_talk(cross_talk)
                })
                .collect();
        }
    }

    if let Some(workflow) = state.active_workflow() {
        let fields: &[(&str, &str)] = match workflow.kind {
            WorkflowKind::TaskWorkflow => TASK_FIELDS,
            WorkflowKind::SummaryWorkflow => SUMMARY_FIELDS,
        };
        if !cross_talk {
            return vec![Classification::new(
                C::WorkflowResponse,
                A::ContinueWorkflow,
                format!("active {} and the message is addressed to the agent", workflow.kind),
            )];
        }
        if !text::extract_fields(content, fields).is_empty() {
            return vec![Classification::new(
                C::WorkflowResponse,
                A::ContinueWorkflow,
                format!("cross-talk carrying {} details", workflow.kind),
            )
            .cross_talk(true)];
        }
    }

    if text::mentions_agent(content) && SUMMARY_WORDS.is_match(content) {
        return vec![Classification::new(
            C::SummaryTrigger,
            A::GenerateSummary,
            "summary requested from the agent",
        )
        .cross_talk(cross_talk)];
    }

    if let Some(trigger) = rules
        .new_task_triggers
        .iter()
        .find(|t| lower.contains(&t.to_lowercase()))
    {
        return vec![
            Classification::new(C::NewTask, A::CreateTask, format!("new-task phrase `{trigger}`"))
                .cross_talk(cross_talk),
        ];
    }

    if let Some(task) = text::mentioned_task(&state.backlog, content) {
        return vec![Classification::new(
            C::ExistingTask,
            A::UpdateContext,
            format!("references tracked task {}", task.id),
        )
        .cross_talk(cross_talk)];
    }

    vec![Classification::new(C::RegularConversation, A::NoAction, "no actionable intent").cross_talk(cross_talk)]
}

/// Classification through a completion backend, retried once on a schema
/// violation (the retry carries the violation) or a backend error.
pub fn classify(
    state: &ProjectState,
    message: &Message,
    backend: &BackendHandle,
    prompts: &PromptPack,
    history_window: usize,
) -> Result<Vec<Classification>, ClassifierError> {
    let prior: Vec<Message> = state.history.iter().filter(|m| m.seq < message.seq).cloned().collect();
    let window = &prior[prior.len().saturating_sub(history_window)..];
    let prompt = prompts
        .render(PromptKind::Classifier, &PromptSlots::from_state(state, message, window))
        .map_err(|e| ClassifierError::Failure(e.to_string()))?;
    let context = format!("Classify this new message:\n{}", message.transcript_line());

    let mut last_error = String::new();
    for attempt in 0..2 {
        let ctx = if attempt == 0 {
            context.clone()
        } else {
            format!(
                "{context}\n\nYour previous reply was rejected ({last_error}). \
                 Reply with the JSON classification only."
            )
        };
        match backend.complete(&prompt, &ctx) {
            Ok(raw) => match validate_classifier_output(&raw) {
                Ok(mut list) => {
                    order_by_confidence(&mut list);
                    return Ok(list);
                }
                Err(violation) => {
                    warn!(attempt, %violation, "classifier reply rejected");
                    last_error = violation.to_string();
                }
            },
            Err(e) => {
                warn!(attempt, error = %e, "classifier backend failed");
                last_error = e.to_string();
            }
        }
    }
    Err(ClassifierError::Failure(last_error))
}

#[derive(Debug, Clone)]
pub enum Classifier {
    Rules(RuleSet),
    Backend(BackendHandle),
}

impl Default for Classifier {
    fn default() -> Self {
        Classifier::Rules(RuleSet::default())
    }
}

impl Classifier {
    pub fn classify(
        &self,
        state: &ProjectState,
        message: &Message,
        prompts: &PromptPack,
        history_window: usize,
    ) -> Result<Vec<Classification>, ClassifierError> {
        match self {
            Classifier::Rules(rules) => Ok(rule_classify(state, message, rules)),
            Classifier::Backend(backend) => classify(state, message, backend, prompts, history_window),
        }
    }
}
