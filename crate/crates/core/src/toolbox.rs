//! Tool registry, per-agent grants and the reference backends.
//!
//! Agents act on a channel only through [`Toolbox::invoke`]. Each call is
//! checked against the static grant table, run against the channel state,
//! and appended to the turn trace whatever its outcome. A failed or denied
//! call leaves the state exactly as it was.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{
    check_unique_handles, ingest_message, parse_wire_time, Message, ModelError, NewTask, ProjectState, Task,
    TeamMember, WireMessage, WorkflowKind, AGENT_HANDLE,
};
use crate::trace::{ToolCallRecord, ToolOutcome};
use crate::workflow::{self, WorkflowError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    Root,
    Classifier,
    TaskCreator,
    SummaryGenerator,
}

impl AgentId {
    pub const ALL: [AgentId; 4] = [
        AgentId::Root,
        AgentId::Classifier,
        AgentId::TaskCreator,
        AgentId::SummaryGenerator,
    ];
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AgentId::Root => "root",
            AgentId::Classifier => "classifier",
            AgentId::TaskCreator => "task_creator",
            AgentId::SummaryGenerator => "summary_generator",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ToolKind {
    Memory,
    Chat,
    Pm,
    Workflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParamType {
    Text,
    Integer,
    /// A JSON document carried as a string (the workflow tools' convention).
    JsonText,
    Object,
    TextList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub ty: ParamType,
    pub required: bool,
}

const fn p(name: &'static str, ty: ParamType, required: bool) -> ParamSpec {
    ParamSpec { name, ty, required }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToolDescriptor {
    pub name: &'static str,
    pub kind: ToolKind,
    pub purpose: &'static str,
    pub params: &'static [ParamSpec],
}

use ParamType as T;

/// The standard tool set.
pub const STANDARD_TOOLS: [ToolDescriptor; 12] = [
    ToolDescriptor {
        name: "memorize_string",
        kind: ToolKind::Memory,
        purpose: "store a key-value pair in session state",
        params: &[p("key", T::Text, true), p("value", T::Text, true)],
    },
    ToolDescriptor {
        name: "get_conversation_history",
        kind: ToolKind::Memory,
        purpose: "retrieve the most recent channel messages",
        params: &[p("n", T::Integer, false)],
    },
    ToolDescriptor {
        name: "load_team_info",
        kind: ToolKind::Memory,
        purpose: "replace the team roster",
        params: &[p("path", T::Text, false), p("members", T::Object, false)],
    },
    ToolDescriptor {
        name: "process_message",
        kind: ToolKind::Chat,
        purpose: "parse and store an incoming chat message",
        params: &[
            p("user", T::Text, true),
            p("message", T::Text, true),
            p("time", T::Text, true),
            p("channel", T::Text, true),
        ],
    },
    ToolDescriptor {
        name: "send_message",
        kind: ToolKind::Chat,
        purpose: "send a response to a chat channel",
        params: &[
            p("channel", T::Text, true),
            p("text", T::Text, true),
            p("time", T::Text, false),
        ],
    },
    ToolDescriptor {
        name: "get_tasks",
        kind: ToolKind::Pm,
        purpose: "fetch the current backlog",
        params: &[],
    },
    ToolDescriptor {
        name: "create_task",
        kind: ToolKind::Pm,
        purpose: "create a new task",
        params: &[
            p("name", T::Text, true),
            p("description", T::Text, false),
            p("list_name", T::Text, false),
            p("labels", T::TextList, false),
            p("assignee", T::Text, false),
        ],
    },
    ToolDescriptor {
        name: "update_task",
        kind: ToolKind::Pm,
        purpose: "modify an existing task",
        params: &[p("id", T::Text, true), p("delta", T::Object, true)],
    },
    ToolDescriptor {
        name: "start_workflow",
        kind: ToolKind::Workflow,
        purpose: "start a human-in-the-loop workflow",
        params: &[
            p("workflow_type", T::Text, true),
            p("initial_data_json", T::JsonText, false),
            p("started_by", T::Text, false),
            p("time", T::Text, false),
        ],
    },
    ToolDescriptor {
        name: "update_workflow_data",
        kind: ToolKind::Workflow,
        purpose: "merge data into the active workflow",
        params: &[p("updates_json", T::JsonText, true)],
    },
    ToolDescriptor {
        name: "get_workflow_state",
        kind: ToolKind::Workflow,
        purpose: "read the current workflow",
        params: &[],
    },
    ToolDescriptor {
        name: "end_workflow",
        kind: ToolKind::Workflow,
        purpose: "finish the active workflow",
        params: &[p("result_json", T::JsonText, false)],
    },
];

/// Read-back counterpart of `memorize_string`; registered only by
/// [`ToolRegistry::with_extensions`].
pub const RECALL_TOOL: ToolDescriptor = ToolDescriptor {
    name: "recall_string",
    kind: ToolKind::Memory,
    purpose: "read a value stored with memorize_string",
    params: &[p("key", T::Text, true)],
};

fn standard_grant(agent: AgentId) -> &'static [&'static str] {
    match agent {
        AgentId::Root => &[
            "memorize_string",
            "get_conversation_history",
            "load_team_info",
            "process_message",
            "send_message",
            "get_tasks",
            "get_workflow_state",
        ],
        AgentId::Classifier => &["get_conversation_history", "get_tasks", "get_workflow_state"],
        AgentId::TaskCreator => &[
            "start_workflow",
            "update_workflow_data",
            "get_workflow_state",
            "end_workflow",
            "create_task",
            "update_task",
        ],
        AgentId::SummaryGenerator => &[
            "get_conversation_history",
            "get_tasks",
            "get_workflow_state",
            "start_workflow",
            "update_workflow_data",
            "end_workflow",
        ],
    }
}

#[derive(Debug, Clone)]
pub struct ToolRegistry {
    tools: BTreeMap<&'static str, ToolDescriptor>,
    grants: BTreeMap<AgentId, BTreeSet<&'static str>>,
}

impl Default for ToolRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl ToolRegistry {
    pub fn standard() -> Self {
        let tools = STANDARD_TOOLS.iter().map(|d| (d.name, d.clone())).collect();
        let grants = AgentId::ALL
            .iter()
            .map(|&a| (a, standard_grant(a).iter().copied().collect()))
            .collect();
        Self { tools, grants }
    }

    /// Standard set plus `recall_string`, granted to the root agent.
    pub fn with_extensions() -> Self {
        let mut reg = Self::standard();
        reg.tools.insert(RECALL_TOOL.name, RECALL_TOOL);
        reg.grants.get_mut(&AgentId::Root).unwrap().insert(RECALL_TOOL.name);
        reg
    }

    pub fn descriptor(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.tools.keys().copied()
    }

    pub fn is_granted(&self, agent: AgentId, tool: &str) -> bool {
        self.grants.get(&agent).is_some_and(|g| g.contains(tool))
    }

    pub fn grant(&self, agent: AgentId) -> Vec<&'static str> {
        self.grants
            .get(&agent)
            .map(|g| g.iter().copied().collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct AdapterError(pub String);

/// Partial update applied by [`PmAdapter::update_task`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDelta {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub list_name: Option<String>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub assignee: Option<String>,
}

impl TaskDelta {
    pub fn apply(&self, task: &mut Task) {
        if let Some(v) = &self.name {
            task.name = v.clone();
        }
        if let Some(v) = &self.description {
            task.description = Some(v.clone());
        }
        if let Some(v) = &self.list_name {
            task.list_name = v.clone();
        }
        if let Some(v) = &self.labels {
            task.labels = v.clone();
        }
        if let Some(v) = &self.assignee {
            task.assignee = Some(v.clone());
        }
    }
}

/// Project-management store. Created tasks get a fresh unique id and url.
pub trait PmAdapter: Send + Sync {
    fn get_tasks(&self) -> Result<Vec<Task>, AdapterError>;
    fn create_task(&self, task: NewTask) -> Result<Task, AdapterError>;
    fn update_task(&self, id: &str, delta: &TaskDelta) -> Result<Task, AdapterError>;
}

/// Outbound chat transport. Returning `Ok` confirms delivery.
pub trait ChatAdapter: Send + Sync {
    fn deliver(&self, channel: &str, text: &str) -> Result<(), AdapterError>;
}

#[derive(Debug, Default)]
struct PmInner {
    tasks: Vec<Task>,
    counter: u64,
}

/// In-process PM store. One instance per channel.
#[derive(Debug, Default)]
pub struct InMemoryPm {
    inner: Mutex<PmInner>,
}

impl InMemoryPm {
    pub fn seeded(tasks: Vec<Task>) -> Self {
        Self {
            inner: Mutex::new(PmInner { tasks, counter: 0 }),
        }
    }
}

impl PmAdapter for InMemoryPm {
    fn get_tasks(&self) -> Result<Vec<Task>, AdapterError> {
        Ok(self.inner.lock().unwrap().tasks.clone())
    }

    fn create_task(&self, task: NewTask) -> Result<Task, AdapterError> {
        let mut inner = self.inner.lock().unwrap();
        let id = loop {
            inner.counter += 1;
            let candidate = format!("T-{:04}", inner.counter);
            if !inner.tasks.iter().any(|t| t.id == candidate) {
                break candidate;
            }
        };
        let created = Task {
            url: format!("mem://tasks/{id}"),
            id,
            name: task.name,
            description: task.description,
            list_name: task.list_name,
            labels: task.labels,
            assignee: task.assignee,
        };
        inner.tasks.push(created.clone());
        Ok(created)
    }

    fn update_task(&self, id: &str, delta: &TaskDelta) -> Result<Task, AdapterError> {
        let mut inner = self.inner.lock().unwrap();
        let task = inner
            .tasks
            .iter_mut()
            .find(|t| t.id == id)
            .ok_or_else(|| AdapterError(format!("unknown task id `{id}`")))?;
        delta.apply(task);
        Ok(task.clone())
    }
}

/// Chat transport that accepts everything and remembers what it sent.
#[derive(Debug, Default)]
pub struct InMemoryChat {
    sent: Mutex<Vec<(String, String)>>,
}

impl InMemoryChat {
    pub fn sent(&self) -> Vec<(String, String)> {
        self.sent.lock().unwrap().clone()
    }
}

impl ChatAdapter for InMemoryChat {
    fn deliver(&self, channel: &str, text: &str) -> Result<(), AdapterError> {
        self.sent.lock().unwrap().push((channel.to_string(), text.to_string()));
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("agent {agent} may not call `{tool}`")]
    PermissionDenied { agent: AgentId, tool: String },
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("invalid arguments for `{tool}`: {reason}")]
    InvalidArgs { tool: String, reason: String },
    #[error("`{tool}` backend failure: {source}")]
    Backend {
        tool: String,
        #[source]
        source: AdapterError,
    },
    #[error("chat delivery failed: {0}")]
    ChatDelivery(AdapterError),
    #[error("roster parse error: {0}")]
    RosterParse(String),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ToolError {
    fn args(tool: &str, reason: impl Into<String>) -> Self {
        ToolError::InvalidArgs {
            tool: tool.to_string(),
            reason: reason.into(),
        }
    }
}

pub const DEFAULT_HISTORY_WINDOW: usize = 50;

pub fn memorize_string(state: &mut ProjectState, key: &str, value: &str) -> Result<(), ToolError> {
    if key.trim().is_empty() {
        return Err(ToolError::args("memorize_string", "key must not be empty"));
    }
    state.memory.insert(key.to_string(), value.to_string());
    Ok(())
}

/// The last `min(n, |history|)` messages, oldest first.
pub fn get_conversation_history(state: &ProjectState, n: usize) -> &[Message] {
    &state.history[state.history.len().saturating_sub(n)..]
}

pub fn load_roster(path: &Path) -> Result<Vec<TeamMember>, ToolError> {
    let text = std::fs::read_to_string(path).map_err(|e| ToolError::RosterParse(format!("{}: {e}", path.display())))?;
    parse_roster(&text).map_err(|e| match e {
        ToolError::RosterParse(msg) => ToolError::RosterParse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_roster(text: &str) -> Result<Vec<TeamMember>, ToolError> {
    let team: Vec<TeamMember> = serde_json::from_str(text).map_err(|e| ToolError::RosterParse(e.to_string()))?;
    check_unique_handles(&team).map_err(|e| ToolError::RosterParse(e.to_string()))?;
    if team.iter().any(|m| m.handle.trim().is_empty()) {
        return Err(ToolError::RosterParse("empty handle".into()));
    }
    Ok(team)
}

pub fn load_backlog(path: &Path) -> Result<Vec<Task>, ToolError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ToolError::args("load_backlog", format!("{}: {e}", path.display())))?;
    let tasks: Vec<Task> =
        serde_json::from_str(&text).map_err(|e| ToolError::args("load_backlog", format!("{}: {e}", path.display())))?;
    crate::model::check_backlog(&tasks)?;
    Ok(tasks)
}

/// Replaces the roster. `source` is a roster file path.
pub fn load_team_info(state: &mut ProjectState, source: &Path) -> Result<(), ToolError> {
    state.team = load_roster(source)?;
    Ok(())
}

/// Delivers `text` and, once delivery is confirmed, appends it to the
/// channel transcript as an agent message.
pub fn send_message(
    chat: &dyn ChatAdapter,
    state: &mut ProjectState,
    channel: &str,
    text: &str,
    at: Option<DateTime<Utc>>,
) -> Result<Message, ToolError> {
    if text.trim().is_empty() {
        return Err(ToolError::args("send_message", "text must not be empty"));
    }
    chat.deliver(channel, text).map_err(ToolError::ChatDelivery)?;
    let at = at
        .or_else(|| state.history.last().map(|m| m.timestamp))
        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    Ok(state.push_message(AGENT_HANDLE, text, at, channel))
}

/// Tools plus the backends they reach.
#[derive(Clone)]
pub struct Toolbox {
    pub registry: ToolRegistry,
    pm: Arc<dyn PmAdapter>,
    chat: Arc<dyn ChatAdapter>,
    history_window: usize,
}

impl fmt::Debug for Toolbox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Toolbox")
            .field("registry", &self.registry)
            .field("history_window", &self.history_window)
            .finish_non_exhaustive()
    }
}

impl Toolbox {
    pub fn new(registry: ToolRegistry, pm: Arc<dyn PmAdapter>, chat: Arc<dyn ChatAdapter>) -> Self {
        Self {
            registry,
            pm,
            chat,
            history_window: DEFAULT_HISTORY_WINDOW,
        }
    }

    pub fn in_memory(backlog: Vec<Task>) -> Self {
        Self::new(
            ToolRegistry::standard(),
            Arc::new(InMemoryPm::seeded(backlog)),
            Arc::new(InMemoryChat::default()),
        )
    }

    pub fn with_history_window(mut self, n: usize) -> Self {
        self.history_window = n;
        self
    }

    pub fn history_window(&self) -> usize {
        self.history_window
    }

    pub fn pm(&self) -> &dyn PmAdapter {
        self.pm.as_ref()
    }

    /// Runs one tool call for `agent` and records it in `trace`.
    ///
    /// On any error the state is restored to what it was before the call.
    pub fn invoke(
        &self,
        agent: AgentId,
        tool: &str,
        args: Value,
        state: &mut ProjectState,
        trace: &mut Vec<ToolCallRecord>,
        step: Option<usize>,
    ) -> Result<Value, ToolError> {
        let result = self.checked_dispatch(agent, tool, &args, state);
        let (outcome, mutated) = match &result {
            Ok((value, mutated)) => (ToolOutcome::Ok(value.clone()), *mutated),
            Err(e) => (ToolOutcome::Error(e.to_string()), false),
        };
        trace.push(ToolCallRecord {
            agent,
            tool: tool.to_string(),
            args,
            outcome,
            mutated,
            step,
        });
        result.map(|(value, _)| value)
    }

    /// Value plus whether the state changed.
    fn checked_dispatch(
        &self,
        agent: AgentId,
        tool: &str,
        args: &Value,
        state: &mut ProjectState,
    ) -> Result<(Value, bool), ToolError> {
        if self.registry.descriptor(tool).is_none() {
            return Err(ToolError::UnknownTool(tool.to_string()));
        }
        if !self.registry.is_granted(agent, tool) {
            return Err(ToolError::PermissionDenied {
                agent,
                tool: tool.to_string(),
            });
        }
        let before = state.clone();
        match self.dispatch(tool, args, state) {
            Ok(value) => {
                let mutated = *state != before;
                Ok((value, mutated))
            }
            Err(e) => {
                *state = before;
                Err(e)
            }
        }
    }

    fn dispatch(&self, tool: &str, args: &Value, state: &mut ProjectState) -> Result<Value, ToolError> {
        match tool {
            "memorize_string" => {
                let key = str_arg(tool, args, "key")?;
                let value = str_arg(tool, args, "value")?;
                memorize_string(state, key, value)?;
                Ok(json!({"stored": key}))
            }
            "recall_string" => {
                let key = str_arg(tool, args, "key")?;
                Ok(state.memory.get(key).map_or(Value::Null, |v| Value::String(v.clone())))
            }
            "get_conversation_history" => {
                let n = match args.get("n") {
                    None | Some(Value::Null) => self.history_window,
                    Some(v) => v
                        .as_u64()
                        .ok_or_else(|| ToolError::args(tool, "`n` must be a non-negative integer"))?
                        as usize,
                };
                Ok(serde_json::to_value(get_conversation_history(state, n)).expect("messages serialize"))
            }
            "load_team_info" => {
                if let Some(path) = args.get("path").and_then(Value::as_str) {
                    load_team_info(state, Path::new(path))?;
                } else if let Some(members) = args.get("members") {
                    let team: Vec<TeamMember> =
                        serde_json::from_value(members.clone()).map_err(|e| ToolError::RosterParse(e.to_string()))?;
                    check_unique_handles(&team).map_err(|e| ToolError::RosterParse(e.to_string()))?;
                    state.team = team;
                } else {
                    return Err(ToolError::args(tool, "expected `path` or `members`"));
                }
                Ok(json!({"members": state.team.len()}))
            }
            "process_message" => {
                let raw = WireMessage::new(
                    str_arg(tool, args, "user")?,
                    str_arg(tool, args, "message")?,
                    str_arg(tool, args, "time")?,
                );
                let channel = str_arg(tool, args, "channel")?;
                let message = ingest_message(state, &raw, channel)?;
                Ok(serde_json::to_value(message).expect("message serializes"))
            }
            "send_message" => {
                let channel = str_arg(tool, args, "channel")?;
                let text = str_arg(tool, args, "text")?;
                let at = match args.get("time").and_then(Value::as_str) {
                    Some(t) => Some(parse_wire_time(t)?),
                    None => None,
                };
                let message = send_message(self.chat.as_ref(), state, channel, text, at)?;
                Ok(json!({"delivered": true, "seq": message.seq}))
            }
            "get_tasks" => {
                let tasks = self.pm.get_tasks().map_err(|source| ToolError::Backend {
                    tool: tool.to_string(),
                    source,
                })?;
                crate::model::check_backlog(&tasks)?;
                state.backlog = tasks;
                Ok(serde_json::to_value(&state.backlog).expect("tasks serialize"))
            }
            "create_task" => {
                let draft: NewTask =
                    serde_json::from_value(args.clone()).map_err(|e| ToolError::args(tool, e.to_string()))?;
                if draft.name.trim().is_empty() {
                    return Err(ToolError::args(tool, "name must not be empty"));
                }
                let task = self.pm.create_task(draft).map_err(|source| ToolError::Backend {
                    tool: tool.to_string(),
                    source,
                })?;
                task.validate()?;
                if state.task(&task.id).is_some() {
                    return Err(ModelError::DuplicateTaskId(task.id).into());
                }
                state.backlog.push(task.clone());
                Ok(serde_json::to_value(task).expect("task serializes"))
            }
            "update_task" => {
                let id = str_arg(tool, args, "id")?;
                let delta: TaskDelta = serde_json::from_value(args.get("delta").cloned().unwrap_or(Value::Null))
                    .map_err(|e| ToolError::args(tool, e.to_string()))?;
                let task = self.pm.update_task(id, &delta).map_err(|source| ToolError::Backend {
                    tool: tool.to_string(),
                    source,
                })?;
                task.validate()?;
                match state.backlog.iter_mut().find(|t| t.id == task.id) {
                    Some(slot) => *slot = task.clone(),
                    None => state.backlog.push(task.clone()),
                }
                Ok(serde_json::to_value(task).expect("task serializes"))
            }
            "start_workflow" => {
                let kind: WorkflowKind = str_arg(tool, args, "workflow_type")?.parse()?;
                let data = match args.get("initial_data_json") {
                    None | Some(Value::Null) => BTreeMap::new(),
                    Some(v) => workflow::parse_flat_map(v).map_err(|e| ToolError::args(tool, e))?,
                };
                let started_by = args.get("started_by").and_then(Value::as_str).unwrap_or(AGENT_HANDLE);
                let at = match args.get("time").and_then(Value::as_str) {
                    Some(t) => parse_wire_time(t)?,
                    None => state
                        .history
                        .last()
                        .map(|m| m.timestamp)
                        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH),
                };
                workflow::start_workflow(state, kind, data, started_by, at)?;
                Ok(serde_json::to_value(&state.workflow).expect("workflow serializes"))
            }
            "update_workflow_data" => {
                let delta = workflow::parse_flat_map(args.get("updates_json").unwrap_or(&Value::Null))
                    .map_err(|e| ToolError::args(tool, e))?;
                workflow::update_workflow_data(state, delta)?;
                Ok(serde_json::to_value(&state.workflow).expect("workflow serializes"))
            }
            "get_workflow_state" => {
                Ok(serde_json::to_value(workflow::get_workflow_state(state)).expect("workflow serializes"))
            }
            "end_workflow" => {
                let result = match args.get("result_json") {
                    None | Some(Value::Null) => BTreeMap::new(),
                    Some(v) => workflow::parse_flat_map(v).map_err(|e| ToolError::args(tool, e))?,
                };
                workflow::end_workflow(state, result)?;
                Ok(serde_json::to_value(&state.workflow).expect("workflow serializes"))
            }
            other => Err(ToolError::UnknownTool(other.to_string())),
        }
    }
}

fn str_arg<'a>(tool: &str, args: &'a Value, key: &str) -> Result<&'a str, ToolError> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| ToolError::args(tool, format!("missing string argument `{key}`")))
}

/// A toolbox bound to one turn's trace.
pub struct ToolSession<'a> {
    pub toolbox: &'a Toolbox,
    pub trace: &'a mut Vec<ToolCallRecord>,
    pub step: Option<usize>,
}

impl<'a> ToolSession<'a> {
    pub fn new(toolbox: &'a Toolbox, trace: &'a mut Vec<ToolCallRecord>) -> Self {
        Self {
            toolbox,
            trace,
            step: None,
        }
    }

    pub fn call(
        &mut self,
        agent: AgentId,
        tool: &str,
        args: Value,
        state: &mut ProjectState,
    ) -> Result<Value, ToolError> {
        self.toolbox.invoke(agent, tool, args, state, self.trace, self.step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member(h: &str) -> TeamMember {
        TeamMember {
            display_name: h.to_uppercase(),
            handle: h.into(),
            role: "dev".into(),
        }
    }

    fn setup() -> (Toolbox, ProjectState) {
        let tb = Toolbox::in_memory(vec![]);
        let mut state = ProjectState::new(vec![member("mchen")], vec![]).unwrap();
        for i in 0..8 {
            ingest_message(
                &mut state,
                &WireMessage::new("mchen", format!("m{i}"), "12-03-2025 10:15:00"),
                "general",
            )
            .unwrap();
        }
        (tb, state)
    }

    #[test]
    fn registry_is_exactly_the_standard_set() {
        let reg = ToolRegistry::standard();
        let names: BTreeSet<_> = reg.names().collect();
        assert_eq!(names.len(), 12);
        assert!(!names.contains("recall_string"));
        assert!(ToolRegistry::with_extensions().descriptor("recall_string").is_some());
    }

    #[test]
    fn classifier_cannot_create_tasks() {
        let (tb, mut state) = setup();
        let before = state.clone();
        let mut trace = vec![];
        let err = tb
            .invoke(
                AgentId::Classifier,
                "create_task",
                json!({"name": "x"}),
                &mut state,
                &mut trace,
                None,
            )
            .unwrap_err();
        assert!(matches!(err, ToolError::PermissionDenied { .. }));
        assert_eq!(state, before);
        assert_eq!(trace.len(), 1);
        assert!(!trace[0].outcome.is_ok());
    }

    #[test]
    fn task_creator_creates_with_fresh_id() {
        let (tb, mut state) = setup();
        let mut trace = vec![];
        let a = tb
            .invoke(
                AgentId::TaskCreator,
                "create_task",
                json!({"name": "A"}),
                &mut state,
                &mut trace,
                None,
            )
            .unwrap();
        let b = tb
            .invoke(
                AgentId::TaskCreator,
                "create_task",
                json!({"name": "B"}),
                &mut state,
                &mut trace,
                None,
            )
            .unwrap();
        assert_ne!(a["id"], b["id"]);
        assert_eq!(state.backlog.len(), 2);
        assert!(trace.iter().all(|r| r.mutated));
    }

    #[test]
    fn history_window_returns_newest_last() {
        let (tb, mut state) = setup();
        let mut trace = vec![];
        let out = tb
            .invoke(
                AgentId::Root,
                "get_conversation_history",
                json!({"n": 5}),
                &mut state,
                &mut trace,
                None,
            )
            .unwrap();
        let contents: Vec<_> = out
            .as_array()
            .unwrap()
            .iter()
            .map(|m| m["content"].as_str().unwrap())
            .collect();
        assert_eq!(contents, ["m3", "m4", "m5", "m6", "m7"]);
        assert!(get_conversation_history(&state, 0).is_empty());
        assert_eq!(get_conversation_history(&state, 100).len(), 8);
        assert!(!trace[0].mutated);
    }

    #[test]
    fn memorize_overwrites() {
        let mut state = ProjectState::default();
        memorize_string(&mut state, "k", "v1").unwrap();
        memorize_string(&mut state, "k", "v2").unwrap();
        assert_eq!(state.memory["k"], "v2");
        assert!(memorize_string(&mut state, " ", "v").is_err());
    }

    #[test]
    fn unknown_tool_is_reported() {
        let (tb, mut state) = setup();
        let mut trace = vec![];
        assert!(matches!(
            tb.invoke(AgentId::Root, "drop_database", json!({}), &mut state, &mut trace, None),
            Err(ToolError::UnknownTool(_))
        ));
    }

    struct DownChat;

    impl ChatAdapter for DownChat {
        fn deliver(&self, _: &str, _: &str) -> Result<(), AdapterError> {
            Err(AdapterError("timeout".into()))
        }
    }

    #[test]
    fn send_message_appends_agent_message_or_nothing() {
        let (tb, mut state) = setup();
        let mut trace = vec![];
        tb.invoke(
            AgentId::Root,
            "send_message",
            json!({"channel": "general", "text": "hello team"}),
            &mut state,
            &mut trace,
            None,
        )
        .unwrap();
        let last = state.history.last().unwrap();
        assert_eq!(last.user, AGENT_HANDLE);
        assert_eq!(last.content, "hello team");

        let mut state2 = state.clone();
        assert!(send_message(&InMemoryChat::default(), &mut state2, "general", "  ", None).is_err());
        let err = send_message(&DownChat, &mut state2, "general", "hi", None).unwrap_err();
        assert!(matches!(err, ToolError::ChatDelivery(_)));
        assert_eq!(state2, state);
    }

    #[test]
    fn roster_parse_errors() {
        assert!(matches!(parse_roster("not json"), Err(ToolError::RosterParse(_))));
        let dup = r#"[{"display_name":"A","handle":"a","role":"x"},{"display_name":"B","handle":"a","role":"y"}]"#;
        assert!(matches!(parse_roster(dup), Err(ToolError::RosterParse(_))));
    }

    #[test]
    fn update_unknown_task_errors() {
        let pm = InMemoryPm::default();
        assert!(pm.update_task("nope", &TaskDelta::default()).is_err());
        let t = pm
            .create_task(NewTask {
                name: "a".into(),
                description: None,
                list_name: "Backlog".into(),
                labels: vec![],
                assignee: None,
            })
            .unwrap();
        let delta = TaskDelta {
            list_name: Some("Done".into()),
            ..TaskDelta::default()
        };
        assert_eq!(pm.update_task(&t.id, &delta).unwrap().list_name, "Done");
    }
}
