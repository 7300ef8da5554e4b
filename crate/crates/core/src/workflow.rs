//! Human-in-the-loop workflows: task formalization and standup summaries.
//!
//! Both are finite state machines whose whole state lives in the channel's
//! [`WorkflowState`] scratch map, so a snapshot of the channel is enough to
//! resume them. All effects go through the toolbox under the sub-agent's
//! own grant.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::warn;

use crate::backend::{extract_json, BackendHandle};
use crate::classifier::Classification;
use crate::model::{
    format_wire_time, ActionType, Message, NewTask, ProjectState, Summary, Task, WorkflowKind, WorkflowState,
};
use crate::prompts::{PromptKind, PromptPack, PromptSlots};
use crate::text;
use crate::toolbox::{AgentId, ToolError, ToolSession};

/// `alias -> canonical` field names recognized in task replies.
pub const TASK_FIELDS: &[(&str, &str)] = &[
    ("title", "title"),
    ("name", "title"),
    ("description", "description"),
    ("desc", "description"),
    ("details", "description"),
    ("priority", "priority"),
    ("prio", "priority"),
    ("assignee", "assignee"),
    ("assign to", "assignee"),
    ("assigned to", "assignee"),
    ("owner", "assignee"),
    ("labels", "labels"),
    ("label", "labels"),
    ("tags", "labels"),
    ("tag", "labels"),
];

/// `alias -> canonical` section names recognized in summary replies.
pub const SUMMARY_FIELDS: &[(&str, &str)] = &[
    ("accomplished", "accomplished"),
    ("done", "accomplished"),
    ("planned", "planned"),
    ("plan", "planned"),
    ("tomorrow", "planned"),
    ("blockers", "blockers"),
    ("blocker", "blockers"),
    ("blocked", "blockers"),
];

/// Most bullets an engine-produced summary section may hold.
pub const MAX_SECTION_ITEMS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkflowError {
    #[error("a {0} is already active")]
    AlreadyActive(WorkflowKind),
    #[error("no active workflow")]
    NoActiveWorkflow,
    #[error("the active workflow is a {found}, expected a {expected}")]
    WrongKind {
        expected: WorkflowKind,
        found: WorkflowKind,
    },
    #[error("workflow data keys must not be empty")]
    EmptyKey,
    #[error("corrupt workflow data at `{key}`: {reason}")]
    CorruptData { key: String, reason: String },
}

pub fn start_workflow(
    state: &mut ProjectState,
    kind: WorkflowKind,
    data: BTreeMap<String, String>,
    started_by: &str,
    at: DateTime<Utc>,
) -> Result<(), WorkflowError> {
    if let Some(active) = state.active_workflow() {
        return Err(WorkflowError::AlreadyActive(active.kind));
    }
    if data.keys().any(|k| k.trim().is_empty()) {
        return Err(WorkflowError::EmptyKey);
    }
    state.workflow = Some(WorkflowState {
        kind,
        is_active: true,
        data,
        started_by: started_by.to_string(),
        started_at: at,
        result: BTreeMap::new(),
    });
    Ok(())
}

/// Merges `delta` into the active workflow, last write wins per key.
pub fn update_workflow_data(state: &mut ProjectState, delta: BTreeMap<String, String>) -> Result<(), WorkflowError> {
    if delta.keys().any(|k| k.trim().is_empty()) {
        return Err(WorkflowError::EmptyKey);
    }
    let workflow = state
        .workflow
        .as_mut()
        .filter(|w| w.is_active)
        .ok_or(WorkflowError::NoActiveWorkflow)?;
    workflow.data.extend(delta);
    Ok(())
}

pub fn get_workflow_state(state: &ProjectState) -> Option<&WorkflowState> {
    state.workflow.as_ref()
}

pub fn end_workflow(state: &mut ProjectState, result: BTreeMap<String, String>) -> Result<(), WorkflowError> {
    let workflow = state
        .workflow
        .as_mut()
        .filter(|w| w.is_active)
        .ok_or(WorkflowError::NoActiveWorkflow)?;
    workflow.is_active = false;
    workflow.result = result;
    Ok(())
}

/// Reads a flat string map from either a JSON object or a string holding
/// one. Non-string values are stored as their JSON text.
pub fn parse_flat_map(value: &Value) -> Result<BTreeMap<String, String>, String> {
    let parsed;
    let value = match value {
        Value::String(s) => {
            parsed = serde_json::from_str::<Value>(s).map_err(|e| format!("not a JSON document: {e}"))?;
            &parsed
        }
        other => other,
    };
    let obj = value.as_object().ok_or("expected a JSON object")?;
    Ok(obj
        .iter()
        .map(|(k, v)| {
            let v = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), v)
        })
        .collect())
}

fn flat_json(map: &BTreeMap<String, String>) -> String {
    serde_json::to_string(map).expect("map serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Priority {
    High,
    Medium,
    Low,
}

impl Priority {
    pub fn as_str(self) -> &'static str {
        match self {
            Priority::High => "High",
            Priority::Medium => "Medium",
            Priority::Low => "Low",
        }
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Priority {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let first = s.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
        match first.trim_matches(|c: char| !c.is_ascii_alphanumeric()) {
            "high" | "urgent" | "critical" | "p0" | "p1" => Ok(Priority::High),
            "medium" | "med" | "normal" | "p2" => Ok(Priority::Medium),
            "low" | "p3" | "p4" => Ok(Priority::Low),
            _ => Err(format!("unrecognized priority `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskPhase {
    Gathering,
    Confirming,
}

impl TaskPhase {
    fn as_str(self) -> &'static str {
        match self {
            TaskPhase::Gathering => "gathering",
            TaskPhase::Confirming => "confirming",
        }
    }
}

/// The task being formalized, stored flat in the workflow data.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskDraft {
    pub title: Option<String>,
    pub description: Option<String>,
    pub priority: Option<Priority>,
    pub assignee: Option<String>,
    pub labels: Vec<String>,
    pub confirmed: bool,
}

impl TaskDraft {
    pub fn from_data(data: &BTreeMap<String, String>) -> Self {
        let text = |k: &str| data.get(k).map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
        Self {
            title: text("title"),
            description: text("description"),
            priority: text("priority").and_then(|p| p.parse().ok()),
            assignee: text("assignee"),
            labels: text("labels")
                .map(|l| {
                    l.split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                })
                .unwrap_or_default(),
            confirmed: data.get("confirmed").is_some_and(|v| v == "true"),
        }
    }

    pub fn to_data(&self) -> BTreeMap<String, String> {
        let mut data = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                data.insert(k.to_string(), v);
            }
        };
        put("title", self.title.clone());
        put("description", self.description.clone());
        put("priority", self.priority.map(|p| p.as_str().to_string()));
        put("assignee", self.assignee.clone());
        put("labels", (!self.labels.is_empty()).then(|| self.labels.join(", ")));
        if self.confirmed {
            data.insert("confirmed".into(), "true".into());
        }
        data
    }

    /// Required fields still absent, in asking order.
    pub fn missing(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.title.is_none() {
            out.push("title");
        }
        if self.description.is_none() {
            out.push("description");
        }
        if self.priority.is_none() {
            out.push("priority");
        }
        if self.assignee.is_none() {
            out.push("assignee");
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.missing().is_empty()
    }

    /// Applies extracted `(field, value)` pairs. Returns whether anything
    /// changed.
    pub fn apply(&mut self, fields: &[(String, String)], state: &ProjectState) -> bool {
        let before = self.clone();
        for (field, value) in fields {
            let value = value.trim();
            match field.as_str() {
                "title" => self.title = Some(value.to_string()),
                "description" => self.description = Some(value.to_string()),
                "priority" => match value.parse() {
                    Ok(p) => self.priority = Some(p),
                    Err(e) => warn!(%e, "ignoring priority"),
                },
                "assignee" => self.assignee = Some(normalize_handle(value, state)),
                "labels" => {
                    for label in value.split([',', ';']).map(|l| l.trim().to_ascii_lowercase()) {
                        if !label.is_empty() && !self.labels.contains(&label) {
                            self.labels.push(label);
                        }
                    }
                }
                _ => {}
            }
        }
        *self != before
    }

    /// Every non-empty field, verbatim, followed by the confirmation question.
    pub fn recap(&self) -> String {
        let mut out = String::from("Here is the task I'm about to create:");
        let rows = [
            ("title", self.title.clone()),
            ("description", self.description.clone()),
            ("priority", self.priority.map(|p| p.to_string())),
            ("assignee", self.assignee.clone()),
            ("labels", (!self.labels.is_empty()).then(|| self.labels.join(", "))),
        ];
        for (name, value) in rows {
            if let Some(v) = value {
                out.push_str(&format!("\n- {name}: {v}"));
            }
        }
        out.push_str("\nShall I create it? Reply yes to confirm, `field: value` to change something, or cancel.");
        out
    }

    pub fn to_new_task(&self) -> NewTask {
        let mut labels = self.labels.clone();
        if let Some(p) = self.priority {
            labels.push(format!("priority:{}", p.as_str().to_ascii_lowercase()));
        }
        NewTask {
            name: self.title.clone().unwrap_or_default(),
            description: self.description.clone(),
            list_name: "Backlog".to_string(),
            labels,
            assignee: self.assignee.clone(),
        }
    }
}

/// Roster handle for `raw` when it names a member, else the trimmed text.
fn normalize_handle(raw: &str, state: &ProjectState) -> String {
    let raw = raw.trim().trim_start_matches('@');
    let first = raw.split_whitespace().next().unwrap_or(raw);
    state
        .member(first)
        .or_else(|| state.team.iter().find(|m| m.display_name.eq_ignore_ascii_case(raw)))
        .map(|m| m.handle.clone())
        .unwrap_or_else(|| raw.to_string())
}

static TITLE_PREFIX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?ix)^(?:
            (?:hey|hi|ok|okay|so|also|btw|team|folks|all|guys)[\s,!:-]+
          | (?:i\s+think|maybe|honestly)\s+
          | (?:new\s+(?:bug|task)|feature\s+request)\s*[:\-]?\s*
          | (?:(?:we|you)\s+(?:should|need\s+to|must)|can\s+(?:we|you)|could\s+(?:we|you)|let'?s)\s+
          | (?:please\s+)?(?:create|add|open)\s+a\s+(?:task|ticket)\s*(?:to|for|:)?\s*
          | (?:(?:this|that|it)\s+)?should\s+be\s+tracked[\s:,-]*
          | track\s+this[\s:,-]*
        )",
    )
    .unwrap()
});

static BUG_WORDS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(bug|broken|crash(es|ing)?|error|fails?|failing)\b").unwrap());
static FEATURE_WORDS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(add|build|feature|support|implement)\b").unwrap());

/// Best-effort task title from a free-text proposal.
pub fn seed_title(content: &str) -> Option<String> {
    let without_mentions: String = content
        .split_whitespace()
        .filter(|w| !w.starts_with('@'))
        .collect::<Vec<_>>()
        .join(" ");
    let sentence = without_mentions
        .split(['.', '!', '?', '\n'])
        .map(str::trim)
        .find(|s| !s.is_empty())?;
    let mut rest = sentence;
    while let Some(m) = TITLE_PREFIX.find(rest) {
        if m.end() == 0 {
            break;
        }
        rest = rest[m.end()..].trim_start();
    }
    let rest = rest.trim_matches(|c: char| c.is_whitespace() || c == ',' || c == ':' || c == '-');
    if rest.split_whitespace().count() < 2 {
        return None;
    }
    let mut chars = rest.chars();
    let first = chars.next()?;
    let mut title: String = first.to_uppercase().chain(chars).collect();
    if title.len() > 80 {
        let cut = title
            .char_indices()
            .take_while(|(i, _)| *i <= 77)
            .last()
            .map_or(0, |(i, _)| i);
        title.truncate(cut);
        title.push_str("...");
    }
    Some(title)
}

fn guess_labels(content: &str) -> Vec<String> {
    let mut labels = Vec::new();
    if BUG_WORDS.is_match(content) {
        labels.push("bug".to_string());
    } else if FEATURE_WORDS.is_match(content) {
        labels.push("feature".to_string());
    }
    labels
}

/// How a participant answered a workflow question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    Affirmative,
    Corrective,
    Abandon,
    Other,
}

/// Reply reading shared by both workflows: explicit fields, then
/// abandonment, then affirmation.
fn read_reply(content: &str, aliases: &[(&str, &str)]) -> (ReplyKind, Vec<(String, String)>) {
    let fields = text::extract_fields(content, aliases);
    let kind = if text::is_abandon(content) {
        ReplyKind::Abandon
    } else if !fields.is_empty() {
        ReplyKind::Corrective
    } else if text::is_affirmative(content) {
        ReplyKind::Affirmative
    } else {
        ReplyKind::Other
    };
    (kind, fields)
}

/// Lets a completion backend read a reply; falls back to the rules on any
/// backend or format problem.
fn adjudicate(
    assistant: Option<&BackendHandle>,
    prompt: Option<String>,
    message: &Message,
    aliases: &[(&str, &str)],
) -> (ReplyKind, Vec<(String, String)>) {
    let rules = read_reply(&message.content, aliases);
    let (Some(backend), Some(prompt)) = (assistant, prompt) else {
        return rules;
    };
    let canon: Vec<&str> = {
        let mut c: Vec<&str> = aliases.iter().map(|(_, c)| *c).collect();
        c.dedup();
        c
    };
    let context = format!(
        "Participant reply:\n{}\n\nReply with JSON only: {{\"reply\": \"affirmative|corrective|abandon|other\", \
         \"fields\": {{...}}}} where fields may use the keys {}.",
        message.transcript_line(),
        canon.join(", ")
    );
    let raw = match backend.complete(&prompt, &context) {
        Ok(raw) => raw,
        Err(e) => {
            warn!(error = %e, "workflow assistant failed, using rules");
            return rules;
        }
    };
    let Some(Value::Object(obj)) = extract_json(&raw) else {
        warn!("workflow assistant reply had no JSON object, using rules");
        return rules;
    };
    let kind = match obj
        .get("reply")
        .and_then(Value::as_str)
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("affirmative") => ReplyKind::Affirmative,
        Some("corrective") => ReplyKind::Corrective,
        Some("abandon") => ReplyKind::Abandon,
        Some("other") => ReplyKind::Other,
        _ => return rules,
    };
    let fields = obj
        .get("fields")
        .and_then(Value::as_object)
        .map(|f| {
            f.iter()
                .filter_map(|(k, v)| {
                    let canonical = aliases.iter().find(|(a, _)| a.eq_ignore_ascii_case(k))?.1;
                    let v = match v {
                        Value::String(s) => s.clone(),
                        Value::Array(items) => items.iter().filter_map(Value::as_str).collect::<Vec<_>>().join(", "),
                        Value::Null => return None,
                        other => other.to_string(),
                    };
                    (!v.trim().is_empty()).then(|| (canonical.to_string(), v))
                })
                .collect()
        })
        .unwrap_or_default();
    (kind, fields)
}

fn render_prompt(
    prompts: &PromptPack,
    kind: PromptKind,
    state: &ProjectState,
    message: &Message,
    window: usize,
) -> Option<String> {
    let history = crate::toolbox::get_conversation_history(state, window);
    prompts
        .render(kind, &PromptSlots::from_state(state, message, history))
        .map_err(|e| warn!(error = %e, "prompt rendering failed"))
        .ok()
}

/// What a sub-policy may use besides the channel state.
pub struct StepContext<'s, 't> {
    pub tools: &'s mut ToolSession<'t>,
    pub assistant: Option<&'s BackendHandle>,
    pub prompts: &'s PromptPack,
}

fn active_of_kind(state: &ProjectState, kind: WorkflowKind) -> Result<&WorkflowState, WorkflowError> {
    let active = state.active_workflow().ok_or(WorkflowError::NoActiveWorkflow)?;
    if active.kind != kind {
        return Err(WorkflowError::WrongKind {
            expected: kind,
            found: active.kind,
        });
    }
    Ok(active)
}

fn missing_prompt(draft: &TaskDraft) -> String {
    let missing = draft.missing().join(", ");
    match &draft.title {
        Some(t) => format!(
            "Got it. To create \"{t}\" I still need: {missing}. Reply with `field: value`, for example `priority: High`."
        ),
        None => format!("Let's draft a task. I still need: {missing}. Reply with `field: value`, for example `title: ...`."),
    }
}

/// One step of the task formalization workflow.
pub fn task_step(
    ctx: &mut StepContext<'_, '_>,
    state: &mut ProjectState,
    message: &Message,
    classification: &Classification,
) -> Result<Vec<String>, ToolError> {
    const TC: AgentId = AgentId::TaskCreator;
    let quiet = classification.is_cross_talk;

    if classification.action == ActionType::CreateTask {
        if let Some(active) = state.active_workflow() {
            return Err(WorkflowError::AlreadyActive(active.kind).into());
        }
        let mut draft = TaskDraft {
            title: seed_title(&message.content),
            labels: guess_labels(&message.content),
            ..TaskDraft::default()
        };
        draft.apply(&text::extract_fields(&message.content, TASK_FIELDS), state);
        let phase = if draft.is_complete() {
            TaskPhase::Confirming
        } else {
            TaskPhase::Gathering
        };
        let mut data = draft.to_data();
        data.insert("phase".into(), phase.as_str().into());
        ctx.tools.call(
            TC,
            "start_workflow",
            json!({
                "workflow_type": WorkflowKind::TaskWorkflow.as_str(),
                "initial_data_json": flat_json(&data),
                "started_by": message.user,
                "time": format_wire_time(&message.timestamp),
            }),
            state,
        )?;
        if quiet {
            return Ok(vec![]);
        }
        return Ok(vec![match phase {
            TaskPhase::Confirming => draft.recap(),
            TaskPhase::Gathering => missing_prompt(&draft),
        }]);
    }

    let active = active_of_kind(state, WorkflowKind::TaskWorkflow)?;
    let mut draft = TaskDraft::from_data(&active.data);
    let phase = match active.data.get("phase").map(String::as_str) {
        Some("confirming") => TaskPhase::Confirming,
        _ => TaskPhase::Gathering,
    };

    if quiet {
        let fields = text::extract_fields(&message.content, TASK_FIELDS);
        if draft.apply(&fields, state) {
            let mut delta = draft.to_data();
            delta.insert("phase".into(), TaskPhase::Gathering.as_str().into());
            ctx.tools.call(
                TC,
                "update_workflow_data",
                json!({"updates_json": flat_json(&delta)}),
                state,
            )?;
        }
        return Ok(vec![]);
    }

    let prompt = ctx.assistant.and_then(|_| {
        render_prompt(
            ctx.prompts,
            PromptKind::TaskCreator,
            state,
            message,
            ctx.tools.toolbox.history_window(),
        )
    });
    let (reply, fields) = adjudicate(ctx.assistant, prompt, message, TASK_FIELDS);

    match reply {
        ReplyKind::Abandon => {
            let mut result = BTreeMap::new();
            result.insert("status".to_string(), "abandoned".to_string());
            ctx.tools
                .call(TC, "end_workflow", json!({"result_json": flat_json(&result)}), state)?;
            let what = draft.title.map(|t| format!(" \"{t}\"")).unwrap_or_default();
            Ok(vec![format!(
                "Okay, I've dropped the task draft{what}. Nothing was created."
            )])
        }
        ReplyKind::Affirmative if phase == TaskPhase::Confirming && draft.is_complete() => {
            let new_task = draft.to_new_task();
            let created = match ctx
                .tools
                .call(TC, "create_task", serde_json::to_value(&new_task).unwrap(), state)
            {
                Ok(v) => v,
                Err(e @ (ToolError::Backend { .. } | ToolError::Model(_))) => {
                    return Ok(vec![format!(
                        "I couldn't create the task on the board ({e}). Reply yes to retry or cancel to drop it."
                    )]);
                }
                Err(e) => return Err(e),
            };
            let task: Task = serde_json::from_value(created).map_err(|e| WorkflowError::CorruptData {
                key: "create_task".into(),
                reason: e.to_string(),
            })?;
            let mut result = BTreeMap::new();
            result.insert("status".to_string(), "created".to_string());
            result.insert("task_id".to_string(), task.id.clone());
            result.insert("url".to_string(), task.url.clone());
            ctx.tools.call(
                TC,
                "update_workflow_data",
                json!({"updates_json": {"confirmed": "true"}}),
                state,
            )?;
            ctx.tools
                .call(TC, "end_workflow", json!({"result_json": flat_json(&result)}), state)?;
            Ok(vec![format!(
                "Created task {}: \"{}\" {}",
                task.id, task.name, task.url
            )])
        }
        _ => {
            draft.apply(&fields, state);
            let next = if draft.is_complete() {
                TaskPhase::Confirming
            } else {
                TaskPhase::Gathering
            };
            let mut delta = draft.to_data();
            delta.insert("phase".into(), next.as_str().into());
            if delta != active_data(state) {
                ctx.tools.call(
                    TC,
                    "update_workflow_data",
                    json!({"updates_json": flat_json(&delta)}),
                    state,
                )?;
            }
            let response = match (next, phase, reply) {
                (TaskPhase::Confirming, TaskPhase::Confirming, ReplyKind::Other) => {
                    "Please reply yes to create the task, `field: value` to change something, or cancel.".to_string()
                }
                (TaskPhase::Confirming, _, _) => draft.recap(),
                (TaskPhase::Gathering, _, _) => missing_prompt(&draft),
            };
            Ok(vec![response])
        }
    }
}

fn active_data(state: &ProjectState) -> BTreeMap<String, String> {
    state.active_workflow().map(|w| w.data.clone()).unwrap_or_default()
}

static BLOCKER_WORDS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(blocked|blocker|blocking|stuck|waiting on|waiting for|can't|cannot|weird|failing)\b").unwrap()
});
static PLAN_WORDS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(will|going to|gonna|plan|planning|next|tomorrow|later|start on|pick up|i'll)\b").unwrap()
});

fn push_capped(section: &mut Vec<String>, item: String) {
    if section.contains(&item) {
        return;
    }
    section.push(item);
    if section.len() > MAX_SECTION_ITEMS {
        section.remove(0);
    }
}

/// Rule synthesis: each member's messages that mention a backlog task,
/// sorted into blockers, plans and accomplishments by keyword.
pub fn synthesize_summaries(state: &ProjectState, trigger: &Message) -> Vec<Summary> {
    let date = trigger.timestamp.date_naive();
    state
        .team
        .iter()
        .map(|member| {
            let mut s = Summary::empty(&member.handle, date);
            for m in state
                .history
                .iter()
                .filter(|m| m.seq != trigger.seq && !m.is_from_agent() && m.user.eq_ignore_ascii_case(&member.handle))
            {
                let Some(task) = text::mentioned_task(&state.backlog, &m.content) else {
                    continue;
                };
                let item = format!("{}: {}", task.name, m.content.trim());
                let section = if BLOCKER_WORDS.is_match(&m.content) {
                    &mut s.blockers
                } else if PLAN_WORDS.is_match(&m.content) {
                    &mut s.planned
                } else {
                    &mut s.accomplished
                };
                push_capped(section, item);
            }
            s
        })
        .collect()
}

fn backend_summaries(
    backend: &BackendHandle,
    prompt: &str,
    state: &ProjectState,
    trigger: &Message,
) -> Option<Vec<Summary>> {
    let context = format!(
        "Summary requested by:\n{}\n\nReply with a JSON list holding one object per team member with the fields \
         team_member, accomplished, planned, blockers.",
        trigger.transcript_line()
    );
    let raw = backend
        .complete(prompt, &context)
        .map_err(|e| warn!(error = %e, "summary backend failed"))
        .ok()?;
    let items = extract_json(&raw)?.as_array()?.clone();
    let date = trigger.timestamp.date_naive();
    let mut by_member: BTreeMap<String, Summary> = BTreeMap::new();
    for item in items {
        let handle = item.get("team_member")?.as_str()?;
        let member = state.member(handle)?;
        let list = |k: &str| -> Vec<String> {
            let mut v: Vec<String> = item
                .get(k)
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
                .unwrap_or_default();
            v.truncate(MAX_SECTION_ITEMS);
            v
        };
        by_member.insert(
            member.handle.clone(),
            Summary {
                team_member: member.handle.clone(),
                date,
                accomplished: list("accomplished"),
                planned: list("planned"),
                blockers: list("blockers"),
                confirmed: false,
            },
        );
    }
    Some(
        state
            .team
            .iter()
            .map(|m| {
                by_member
                    .remove(&m.handle)
                    .unwrap_or_else(|| Summary::empty(&m.handle, date))
            })
            .collect(),
    )
}

fn present_summary(state: &ProjectState, s: &Summary) -> String {
    let name = state
        .member(&s.team_member)
        .map_or(s.team_member.clone(), |m| m.display_name.clone());
    let section = |title: &str, items: &[String]| {
        let mut out = format!("\n{title}:");
        if items.is_empty() {
            out.push_str("\n- nothing recorded");
        }
        for i in items {
            out.push_str(&format!("\n- {i}"));
        }
        out
    };
    format!(
        "Standup summary for {name} (@{}) on {}:{}{}{}\n@{} is anything missing or needing revision? Reply yes to confirm.",
        s.team_member,
        s.date.format("%Y-%m-%d"),
        section("Accomplished", &s.accomplished),
        section("Planned", &s.planned),
        section("Blockers", &s.blockers),
        s.team_member,
    )
}

fn summary_data(drafts: &[Summary], cursor: usize) -> BTreeMap<String, String> {
    let mut data = BTreeMap::new();
    data.insert(
        "drafts".into(),
        serde_json::to_string(drafts).expect("summaries serialize"),
    );
    data.insert("cursor".into(), cursor.to_string());
    data
}

fn read_summary_data(w: &WorkflowState) -> Result<(Vec<Summary>, usize), WorkflowError> {
    let corrupt = |key: &str, reason: String| WorkflowError::CorruptData {
        key: key.to_string(),
        reason,
    };
    let drafts: Vec<Summary> = serde_json::from_str(w.data.get("drafts").map_or("[]", String::as_str))
        .map_err(|e| corrupt("drafts", e.to_string()))?;
    let cursor: usize = w
        .data
        .get("cursor")
        .map_or(Ok(0), |c| c.parse())
        .map_err(|e: std::num::ParseIntError| corrupt("cursor", e.to_string()))?;
    if cursor >= drafts.len() {
        return Err(corrupt(
            "cursor",
            format!("{cursor} out of range for {} drafts", drafts.len()),
        ));
    }
    Ok((drafts, cursor))
}

/// Summaries produced by a finished summary workflow, if it completed.
pub fn finished_summaries(w: &WorkflowState) -> Option<Vec<Summary>> {
    serde_json::from_str(w.result.get("summaries")?).ok()
}

/// One step of the standup-summary workflow.
pub fn summary_step(
    ctx: &mut StepContext<'_, '_>,
    state: &mut ProjectState,
    message: &Message,
    classification: &Classification,
) -> Result<Vec<String>, ToolError> {
    const SG: AgentId = AgentId::SummaryGenerator;
    let quiet = classification.is_cross_talk;

    if classification.action == ActionType::GenerateSummary {
        if let Some(active) = state.active_workflow() {
            return Err(WorkflowError::AlreadyActive(active.kind).into());
        }
        // Refresh the reads this agent is entitled to before synthesizing.
        ctx.tools.call(SG, "get_tasks", json!({}), state)?;
        ctx.tools.call(
            SG,
            "get_conversation_history",
            json!({"n": ctx.tools.toolbox.history_window()}),
            state,
        )?;
        let start_args = |data: &BTreeMap<String, String>| {
            json!({
                "workflow_type": WorkflowKind::SummaryWorkflow.as_str(),
                "initial_data_json": flat_json(data),
                "started_by": message.user,
                "time": format_wire_time(&message.timestamp),
            })
        };
        let has_activity = state.history.iter().any(|m| m.seq != message.seq && !m.is_from_agent());
        if state.team.is_empty() || !has_activity {
            ctx.tools
                .call(SG, "start_workflow", start_args(&BTreeMap::new()), state)?;
            let mut result = BTreeMap::new();
            result.insert("status".to_string(), "empty".to_string());
            ctx.tools
                .call(SG, "end_workflow", json!({"result_json": flat_json(&result)}), state)?;
            let text = if state.team.is_empty() {
                "No team roster is loaded, so there is nobody to summarize."
            } else {
                "I found no team activity to summarize yet."
            };
            return Ok(if quiet { vec![] } else { vec![text.to_string()] });
        }
        let drafts = ctx
            .assistant
            .and_then(|backend| {
                let prompt = render_prompt(
                    ctx.prompts,
                    PromptKind::SummaryGenerator,
                    state,
                    message,
                    ctx.tools.toolbox.history_window(),
                )?;
                backend_summaries(backend, &prompt, state, message)
            })
            .unwrap_or_else(|| synthesize_summaries(state, message));
        ctx.tools
            .call(SG, "start_workflow", start_args(&summary_data(&drafts, 0)), state)?;
        return Ok(if quiet {
            vec![]
        } else {
            vec![present_summary(state, &drafts[0])]
        });
    }

    let active = active_of_kind(state, WorkflowKind::SummaryWorkflow)?;
    let (mut drafts, cursor) = read_summary_data(active)?;

    if quiet {
        let fields = text::extract_fields(&message.content, SUMMARY_FIELDS);
        if !fields.is_empty() {
            amend(&mut drafts[cursor], &fields);
            ctx.tools.call(
                SG,
                "update_workflow_data",
                json!({"updates_json": flat_json(&summary_data(&drafts, cursor))}),
                state,
            )?;
        }
        return Ok(vec![]);
    }

    let prompt = ctx.assistant.and_then(|_| {
        render_prompt(
            ctx.prompts,
            PromptKind::SummaryGenerator,
            state,
            message,
            ctx.tools.toolbox.history_window(),
        )
    });
    let (reply, fields) = adjudicate(ctx.assistant, prompt, message, SUMMARY_FIELDS);
    match reply {
        ReplyKind::Abandon => {
            let confirmed: Vec<&Summary> = drafts.iter().filter(|s| s.confirmed).collect();
            let mut result = BTreeMap::new();
            result.insert("status".to_string(), "abandoned".to_string());
            result.insert("summaries".to_string(), serde_json::to_string(&confirmed).unwrap());
            ctx.tools.call(SG, "end_workflow", json!({"result_json": flat_json(&result)}), state)?;
            Ok(vec!["Okay, I've stopped the summary review.".to_string()])
        }
        ReplyKind::Corrective => {
            amend(&mut drafts[cursor], &fields);
            ctx.tools.call(
                SG,
                "update_workflow_data",
                json!({"updates_json": flat_json(&summary_data(&drafts, cursor))}),
                state,
            )?;
            Ok(vec![present_summary(state, &drafts[cursor])])
        }
        ReplyKind::Affirmative => {
            drafts[cursor].confirmed = true;
            let next = cursor + 1;
            if next == drafts.len() {
                let mut result = BTreeMap::new();
                result.insert("status".to_string(), "completed".to_string());
                result.insert("summaries".to_string(), serde_json::to_string(&drafts).unwrap());
                ctx.tools.call(SG, "end_workflow", json!({"result_json": flat_json(&result)}), state)?;
                Ok(vec![format!("All {} summaries are confirmed. Thanks, everyone!", drafts.len())])
            } else {
                ctx.tools.call(
                    SG,
                    "update_workflow_data",
                    json!({"updates_json": flat_json(&summary_data(&drafts, next))}),
                    state,
                )?;
                Ok(vec![present_summary(state, &drafts[next])])
            }
        }
        ReplyKind::Other => Ok(vec![format!(
            "Please reply yes to confirm @{}'s summary, add items as `done: ...`, `planned: ...` or `blockers: ...`, or say cancel.",
            drafts[cursor].team_member
        )]),
    }
}

fn amend(summary: &mut Summary, fields: &[(String, String)]) {
    for (field, value) in fields {
        let section = match field.as_str() {
            "accomplished" => &mut summary.accomplished,
            "planned" => &mut summary.planned,
            "blockers" => &mut summary.blockers,
            _ => continue,
        };
        push_capped(section, value.trim().to_string());
    }
    summary.confirmed = false;
}

/// Memory key for an UPDATE_CONTEXT observation.
pub fn context_key(state: &ProjectState, message: &Message) -> String {
    let topic = text::mentioned_task(&state.backlog, &message.content)
        .map(|t| t.id.clone())
        .unwrap_or_else(|| text::topic_key(&message.content));
    format!("ctx:{topic}:{}", message.seq)
}

/// Records an observation about tracked work. Silent; backlog untouched.
pub fn record_context_update(
    tools: &mut ToolSession<'_>,
    state: &mut ProjectState,
    message: &Message,
) -> Result<String, ToolError> {
    let key = context_key(state, message);
    tools.call(
        AgentId::Root,
        "memorize_string",
        json!({"key": key, "value": message.content}),
        state,
    )?;
    Ok(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ingest_message, parse_wire_time, MessageCategory, TeamMember, WireMessage};
    use crate::toolbox::Toolbox;

    fn t0() -> DateTime<Utc> {
        parse_wire_time("12-03-2025 10:15:00").unwrap()
    }

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn primitives_enforce_single_active_workflow() {
        let mut s = ProjectState::default();
        start_workflow(&mut s, WorkflowKind::TaskWorkflow, map(&[("title", "x")]), "a", t0()).unwrap();
        assert_eq!(s.workflow.as_ref().unwrap().data["title"], "x");
        assert_eq!(
            start_workflow(&mut s, WorkflowKind::SummaryWorkflow, BTreeMap::new(), "a", t0()),
            Err(WorkflowError::AlreadyActive(WorkflowKind::TaskWorkflow))
        );
        update_workflow_data(&mut s, map(&[("a", "1")])).unwrap();
        update_workflow_data(&mut s, map(&[("a", "2")])).unwrap();
        assert_eq!(get_workflow_state(&s).unwrap().data["a"], "2");
        end_workflow(&mut s, map(&[("status", "done")])).unwrap();
        assert_eq!(
            update_workflow_data(&mut s, map(&[("a", "3")])),
            Err(WorkflowError::NoActiveWorkflow)
        );
        assert_eq!(
            end_workflow(&mut s, BTreeMap::new()),
            Err(WorkflowError::NoActiveWorkflow)
        );
        assert_eq!(get_workflow_state(&s).unwrap().data["a"], "2");
    }

    #[test]
    fn flat_map_accepts_json_text_or_object() {
        let a = parse_flat_map(&json!("{\"a\": \"1\", \"n\": 2}")).unwrap();
        let b = parse_flat_map(&json!({"a": "1", "n": 2})).unwrap();
        assert_eq!(a, b);
        assert_eq!(a["n"], "2");
        assert!(parse_flat_map(&json!("[1]")).is_err());
    }

    #[test]
    fn seeds_titles_from_proposals() {
        assert_eq!(
            seed_title("We should add dark mode to the settings page. It hurts my eyes").as_deref(),
            Some("Add dark mode to the settings page")
        );
        assert_eq!(
            seed_title("New bug: CSV export drops the header row").as_deref(),
            Some("CSV export drops the header row")
        );
        assert_eq!(seed_title("@devnous ok").as_deref(), None);
    }

    #[test]
    fn draft_round_trips_through_flat_data() {
        let draft = TaskDraft {
            title: Some("Add SSO".into()),
            description: Some("Okta".into()),
            priority: Some(Priority::High),
            assignee: Some("mchen".into()),
            labels: vec!["feature".into(), "auth".into()],
            confirmed: false,
        };
        assert_eq!(TaskDraft::from_data(&draft.to_data()), draft);
        let recap = draft.recap();
        for v in ["Add SSO", "Okta", "High", "mchen", "feature, auth"] {
            assert!(recap.contains(v), "{v}");
        }
        assert!(draft.to_new_task().labels.contains(&"priority:high".to_string()));
    }

    fn team_state() -> ProjectState {
        let member = |h: &str, n: &str| TeamMember {
            display_name: n.into(),
            handle: h.into(),
            role: "dev".into(),
        };
        let task = Task {
            id: "T-1".into(),
            name: "Fix user profile bug".into(),
            description: None,
            list_name: "In Progress".into(),
            labels: vec![],
            assignee: Some("mchen".into()),
            url: "mem://tasks/T-1".into(),
        };
        ProjectState::new(
            vec![member("mchen", "Mei Chen"), member("ajones", "Alex Jones")],
            vec![task],
        )
        .unwrap()
    }

    fn say(state: &mut ProjectState, user: &str, text: &str) -> Message {
        ingest_message(state, &WireMessage::new(user, text, "12-03-2025 10:15:00"), "general").unwrap()
    }

    type StepFn =
        fn(&mut StepContext<'_, '_>, &mut ProjectState, &Message, &Classification) -> Result<Vec<String>, ToolError>;

    fn step(tb: &Toolbox, state: &mut ProjectState, msg: &Message, cls: Classification, f: StepFn) -> Vec<String> {
        let mut trace = vec![];
        let mut tools = ToolSession::new(tb, &mut trace);
        let prompts = PromptPack::default();
        let mut ctx = StepContext {
            tools: &mut tools,
            assistant: None,
            prompts: &prompts,
        };
        f(&mut ctx, state, msg, &cls).unwrap()
    }

    fn cw() -> Classification {
        Classification::new(MessageCategory::WorkflowResponse, ActionType::ContinueWorkflow, "test")
    }

    #[test]
    fn task_workflow_end_to_end() {
        let mut state = team_state();
        let tb = Toolbox::in_memory(state.backlog.clone());
        let m = say(&mut state, "ajones", "We should add CSV export to reports");
        let nt = Classification::new(MessageCategory::NewTask, ActionType::CreateTask, "test");
        let r = step(&tb, &mut state, &m, nt, task_step);
        assert!(r[0].contains("description, priority, assignee"), "{r:?}");

        let m = say(&mut state, "ajones", "description: export the table as CSV");
        let r = step(&tb, &mut state, &m, cw(), task_step);
        assert!(
            r[0].contains("priority, assignee") && !r[0].contains("description,"),
            "{r:?}"
        );

        let m = say(&mut state, "mchen", "@ajones label: backend");
        let r = step(&tb, &mut state, &m, cw().cross_talk(true), task_step);
        assert!(r.is_empty());
        assert!(TaskDraft::from_data(&state.workflow.as_ref().unwrap().data)
            .labels
            .contains(&"backend".into()));

        let m = say(&mut state, "ajones", "priority: high, assignee: @mchen");
        let r = step(&tb, &mut state, &m, cw(), task_step);
        assert!(r[0].starts_with("Here is the task"));

        let m = say(&mut state, "ajones", "yes");
        let r = step(&tb, &mut state, &m, cw(), task_step);
        assert!(r[0].starts_with("Created task"), "{r:?}");
        assert_eq!(state.backlog.len(), 2);
        let w = state.workflow.as_ref().unwrap();
        assert!(!w.is_active);
        assert_eq!(w.result["status"], "created");
        let created = state.backlog.last().unwrap();
        assert_eq!(created.assignee.as_deref(), Some("mchen"));
        assert!(created.labels.contains(&"priority:high".to_string()));
    }

    #[test]
    fn abandon_ends_without_creating() {
        let mut state = team_state();
        let tb = Toolbox::in_memory(state.backlog.clone());
        let m = say(&mut state, "ajones", "new task: rotate the API keys");
        let nt = Classification::new(MessageCategory::NewTask, ActionType::CreateTask, "test");
        step(&tb, &mut state, &m, nt, task_step);
        let m = say(&mut state, "ajones", "never mind, cancel that");
        step(&tb, &mut state, &m, cw(), task_step);
        assert_eq!(state.workflow.as_ref().unwrap().result["status"], "abandoned");
        assert_eq!(state.backlog.len(), 1);
    }

    #[test]
    fn summary_workflow_covers_roster() {
        let mut state = team_state();
        let tb = Toolbox::in_memory(state.backlog.clone());
        say(&mut state, "mchen", "The bug fix for user profiles is almost done");
        let m = say(&mut state, "ajones", "@devnous can you generate today's team summary?");
        let gs = Classification::new(MessageCategory::SummaryTrigger, ActionType::GenerateSummary, "test");
        let r = step(&tb, &mut state, &m, gs, summary_step);
        assert!(
            r[0].contains("Mei Chen") && r[0].contains("Fix user profile bug"),
            "{r:?}"
        );
        let m = say(&mut state, "mchen", "blockers: waiting on design review");
        let r = step(&tb, &mut state, &m, cw(), summary_step);
        assert!(r[0].contains("waiting on design review"));
        for _ in 0..2 {
            let m = say(&mut state, "mchen", "yes");
            step(&tb, &mut state, &m, cw(), summary_step);
        }
        let w = state.workflow.as_ref().unwrap();
        assert!(!w.is_active);
        let summaries = finished_summaries(w).unwrap();
        assert_eq!(summaries.len(), 2);
        assert!(summaries.iter().all(|s| s.confirmed));
    }

    #[test]
    fn summary_on_empty_history_ends_immediately() {
        let mut state = team_state();
        let tb = Toolbox::in_memory(state.backlog.clone());
        let m = say(&mut state, "ajones", "@devnous summary please");
        let gs = Classification::new(MessageCategory::SummaryTrigger, ActionType::GenerateSummary, "test");
        let r = step(&tb, &mut state, &m, gs, summary_step);
        assert_eq!(r, vec!["I found no team activity to summarize yet.".to_string()]);
        let w = state.workflow.as_ref().unwrap();
        assert!(!w.is_active);
        assert_eq!(w.result["status"], "empty");
    }

    #[test]
    fn context_updates_are_seq_keyed() {
        let mut state = team_state();
        let tb = Toolbox::in_memory(state.backlog.clone());
        let mut trace = vec![];
        let a = say(&mut state, "mchen", "The bug fix for user profiles is almost done");
        let b = say(&mut state, "mchen", "The bug fix for user profiles is almost done");
        let mut tools = ToolSession::new(&tb, &mut trace);
        let ka = record_context_update(&mut tools, &mut state, &a).unwrap();
        let kb = record_context_update(&mut tools, &mut state, &b).unwrap();
        assert!(ka.starts_with("ctx:T-1:"));
        assert_ne!(ka, kb);
        assert_eq!(state.memory.len(), 2);
        let c = say(&mut state, "mchen", "lunch at noon?");
        let kc = record_context_update(&mut tools, &mut state, &c).unwrap();
        assert_eq!(kc, format!("ctx:{}:{}", text::topic_key("lunch at noon?"), c.seq));
    }
}
