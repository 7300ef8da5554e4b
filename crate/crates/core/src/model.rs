//! Domain types shared by every part of the engine.
//!
//! A channel is observed as a sequence of [`Message`]s. The engine keeps a
//! [`ProjectState`] per channel holding the backlog, the conversation
//! history and at most one human-in-the-loop [`WorkflowState`]. Every
//! message is labelled with a multiset of [`IntentTuple`]s, which is also
//! the unit of evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SubsecRound, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::trace::TurnTrace;

/// Chat handle the engine speaks under.
pub const AGENT_HANDLE: &str = "devnous";

/// Timestamp layout used by chat payloads and the simulator prompt.
pub const WIRE_TIME_FORMAT: &str = "%d-%m-%Y %H:%M:%S";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("unknown message category `{0}`")]
    UnknownCategory(String),
    #[error("unknown action type `{0}`")]
    UnknownAction(String),
    #[error("unknown workflow kind `{0}`")]
    UnknownWorkflowKind(String),
    #[error("duplicate team handle `{0}`")]
    DuplicateHandle(String),
    #[error("duplicate task id `{0}`")]
    DuplicateTaskId(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
}

pub fn format_wire_time(ts: &DateTime<Utc>) -> String {
    ts.format(WIRE_TIME_FORMAT).to_string()
}

pub fn parse_wire_time(raw: &str) -> Result<DateTime<Utc>, ModelError> {
    NaiveDateTime::parse_from_str(raw.trim(), WIRE_TIME_FORMAT)
        .map(|naive| naive.and_utc())
        .map_err(|e| ModelError::MalformedMessage(format!("timestamp `{raw}`: {e}")))
}

/// A chat message as it arrives from a chat service or the simulator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub user: String,
    pub message: String,
    pub time: String,
}

impl WireMessage {
    pub fn new(user: impl Into<String>, message: impl Into<String>, time: impl Into<String>) -> Self {
        Self {
            user: user.into(),
            message: message.into(),
            time: time.into(),
        }
    }
}

/// One ingested chat utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub content: String,
    pub user: String,
    pub timestamp: DateTime<Utc>,
    pub channel: String,
    /// Ingestion index, assigned by the engine.
    pub seq: u64,
}

impl Message {
    pub fn to_wire(&self) -> WireMessage {
        WireMessage {
            user: self.user.clone(),
            message: self.content.clone(),
            time: format_wire_time(&self.timestamp),
        }
    }

    pub fn is_from_agent(&self) -> bool {
        self.user.eq_ignore_ascii_case(AGENT_HANDLE)
    }

    /// `[DD-MM-YYYY HH:MM:SS] user: content`
    pub fn transcript_line(&self) -> String {
        format!(
            "[{}] {}: {}",
            format_wire_time(&self.timestamp),
            self.user,
            self.content
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamMember {
    pub display_name: String,
    pub handle: String,
    pub role: String,
}

macro_rules! closed_enum {
    ($(#[$meta:meta])* $name:ident, $err:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        /// Case-insensitive; surrounding whitespace is ignored.
        impl FromStr for $name {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let wanted = s.trim();
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(wanted))
                    .ok_or_else(|| ModelError::$err(s.to_string()))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(deserializer)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

closed_enum!(
    /// What a message is.
    MessageCategory, UnknownCategory {
        NewTask => "NEW_TASK",
        ExistingTask => "EXISTING_TASK",
        WorkflowResponse => "WORKFLOW_RESPONSE",
        RegularConversation => "REGULAR_CONVERSATION",
        SummaryTrigger => "SUMMARY_TRIGGER",
    }
);

closed_enum!(
    /// What the agent should do about a message.
    ActionType, UnknownAction {
        CreateTask => "CREATE_TASK",
        ContinueWorkflow => "CONTINUE_WORKFLOW",
        UpdateContext => "UPDATE_CONTEXT",
        GenerateSummary => "GENERATE_SUMMARY",
        NoAction => "NO_ACTION",
    }
);

/// A `(category, action)` label. Any pairing is representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IntentTuple {
    pub category: MessageCategory,
    pub action: ActionType,
}

impl IntentTuple {
    pub const fn new(category: MessageCategory, action: ActionType) -> Self {
        Self { category, action }
    }
}

impl fmt::Display for IntentTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.category, self.action)
    }
}

/// Counted bag of intent tuples. Serialized as the expanded, sorted list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct IntentMultiset {
    counts: BTreeMap<IntentTuple, u32>,
}

impl IntentMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(tuple: IntentTuple) -> Self {
        let mut set = Self::new();
        set.insert(tuple);
        set
    }

    pub fn insert(&mut self, tuple: IntentTuple) {
        self.insert_n(tuple, 1);
    }

    pub fn insert_n(&mut self, tuple: IntentTuple, n: u32) {
        if n > 0 {
            *self.counts.entry(tuple).or_insert(0) += n;
        }
    }

    pub fn count(&self, tuple: &IntentTuple) -> u32 {
        self.counts.get(tuple).copied().unwrap_or(0)
    }

    /// Total cardinality, duplicates included.
    pub fn len(&self) -> usize {
        self.counts.values().map(|&c| c as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Distinct tuples with their counts, in tuple order.
    pub fn iter(&self) -> impl Iterator<Item = (&IntentTuple, u32)> {
        self.counts.iter().map(|(t, &c)| (t, c))
    }

    pub fn distinct(&self) -> impl Iterator<Item = &IntentTuple> {
        self.counts.keys()
    }

    /// Every tuple repeated by its count, in tuple order.
    pub fn expanded(&self) -> Vec<IntentTuple> {
        self.counts
            .iter()
            .flat_map(|(t, &c)| std::iter::repeat_n(*t, c as usize))
            .collect()
    }

    /// Additive union: counts are summed.
    pub fn sum(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (t, c) in other.iter() {
            out.insert_n(*t, c);
        }
        out
    }

    /// Min-count intersection.
    pub fn intersection(&self, other: &Self) -> Self {
        let mut out = Self::new();
        for (t, c) in self.iter() {
            out.insert_n(*t, c.min(other.count(t)));
        }
        out
    }
}

impl FromIterator<IntentTuple> for IntentMultiset {
    fn from_iter<I: IntoIterator<Item = IntentTuple>>(iter: I) -> Self {
        let mut set = Self::new();
        for t in iter {
            set.insert(t);
        }
        set
    }
}

impl Serialize for IntentMultiset {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.expanded().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for IntentMultiset {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(Vec::<IntentTuple>::deserialize(deserializer)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkflowKind {
    TaskWorkflow,
    SummaryWorkflow,
}

impl WorkflowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkflowKind::TaskWorkflow => "task_workflow",
            WorkflowKind::SummaryWorkflow => "summary_workflow",
        }
    }
}

impl fmt::Display for WorkflowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorkflowKind {
    type Err = ModelError;

    /// Accepts the prompt-pack spellings (`task_creation`) as aliases.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "task_workflow" | "task_creation" | "task" => Ok(WorkflowKind::TaskWorkflow),
            "summary_workflow" | "summary_generation" | "summary" => Ok(WorkflowKind::SummaryWorkflow),
            _ => Err(ModelError::UnknownWorkflowKind(s.to_string())),
        }
    }
}

impl Serialize for WorkflowKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for WorkflowKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// The single human-in-the-loop workflow a channel may have.
///
/// Once `is_active` is false the state is terminal; the workflow engine
/// refuses to touch it again.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub kind: WorkflowKind,
    pub is_active: bool,
    pub data: BTreeMap<String, String>,
    pub started_by: String,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub result: BTreeMap<String, String>,
}

/// A backlog item, field-for-field the PM store schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub name: String,
    pub description: Option<String>,
    pub list_name: String,
    #[serde(default)]
    pub labels: Vec<String>,
    pub assignee: Option<String>,
    pub url: String,
}

impl Task {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.trim().is_empty() {
            return Err(ModelError::InvalidTask("empty id".into()));
        }
        if self.name.trim().is_empty() {
            return Err(ModelError::InvalidTask(format!("task {} has an empty name", self.id)));
        }
        if self.list_name.trim().is_empty() {
            return Err(ModelError::InvalidTask(format!(
                "task {} has an empty list_name",
                self.id
            )));
        }
        Ok(())
    }
}

/// A task as submitted to the PM store, before it has an id and url.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewTask {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default = "default_list_name")]
    pub list_name: String,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub assignee: Option<String>,
}

fn default_list_name() -> String {
    "Backlog".to_string()
}

/// Standup summary for one team member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub team_member: String,
    pub date: NaiveDate,
    pub accomplished: Vec<String>,
    pub planned: Vec<String>,
    #[serde(default)]
    pub blockers: Vec<String>,
    #[serde(default)]
    pub confirmed: bool,
}

impl Summary {
    pub fn empty(team_member: impl Into<String>, date: NaiveDate) -> Self {
        Self {
            team_member: team_member.into(),
            date,
            accomplished: Vec::new(),
            planned: Vec::new(),
            blockers: Vec::new(),
            confirmed: false,
        }
    }
}

/// Everything the engine knows about one channel.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectState {
    /// Cached backlog, refreshed from the PM store.
    pub backlog: Vec<Task>,
    /// Ordered by `seq`.
    pub history: Vec<Message>,
    pub workflow: Option<WorkflowState>,
    pub team: Vec<TeamMember>,
    pub memory: BTreeMap<String, String>,
}

impl ProjectState {
    pub fn new(team: Vec<TeamMember>, backlog: Vec<Task>) -> Result<Self, ModelError> {
        check_unique_handles(&team)?;
        check_backlog(&backlog)?;
        Ok(Self {
            backlog,
            team,
            ..Self::default()
        })
    }

    pub fn active_workflow(&self) -> Option<&WorkflowState> {
        self.workflow.as_ref().filter(|w| w.is_active)
    }

    pub fn next_seq(&self) -> u64 {
        self.history.last().map_or(1, |m| m.seq + 1)
    }

    pub fn member(&self, handle: &str) -> Option<&TeamMember> {
        let handle = handle.trim_start_matches('@');
        self.team.iter().find(|m| m.handle.eq_ignore_ascii_case(handle))
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.backlog.iter().find(|t| t.id == id)
    }

    /// Appends an already-built message, assigning it the next seq.
    pub(crate) fn push_message(
        &mut self,
        user: &str,
        content: &str,
        timestamp: DateTime<Utc>,
        channel: &str,
    ) -> Message {
        let message = Message {
            content: content.to_string(),
            user: user.to_string(),
            timestamp: timestamp.trunc_subsecs(0),
            channel: channel.to_string(),
            seq: self.next_seq(),
        };
        self.history.push(message.clone());
        message
    }
}

pub fn check_unique_handles(team: &[TeamMember]) -> Result<(), ModelError> {
    let mut seen = std::collections::BTreeSet::new();
    for m in team {
        if !seen.insert(m.handle.to_ascii_lowercase()) {
            return Err(ModelError::DuplicateHandle(m.handle.clone()));
        }
    }
    Ok(())
}

pub fn check_backlog(backlog: &[Task]) -> Result<(), ModelError> {
    let mut seen = std::collections::BTreeSet::new();
    for t in backlog {
        t.validate()?;
        if !seen.insert(t.id.as_str()) {
            return Err(ModelError::DuplicateTaskId(t.id.clone()));
        }
    }
    Ok(())
}

/// Parses a wire payload and appends it to the channel history.
///
/// The payload is rejected, never repaired: empty content or an
/// unparseable timestamp is a [`ModelError::MalformedMessage`].
pub fn ingest_message(state: &mut ProjectState, raw: &WireMessage, channel: &str) -> Result<Message, ModelError> {
    if raw.message.trim().is_empty() {
        return Err(ModelError::MalformedMessage("empty content".into()));
    }
    if raw.user.trim().is_empty() {
        return Err(ModelError::MalformedMessage("empty user handle".into()));
    }
    let timestamp = parse_wire_time(&raw.time)?;
    Ok(state.push_message(raw.user.trim(), &raw.message, timestamp, channel))
}

/// Deep, independent copy of a channel state.
pub fn snapshot_state(state: &ProjectState) -> ProjectState {
    state.clone()
}

/// One benchmark turn: a human message and its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: usize,
    pub message: WireMessage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<IntentMultiset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<IntentMultiset>,
    #[serde(default)]
    pub agent_outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TurnTrace>,
}

impl TurnRecord {
    pub fn new(turn_index: usize, message: WireMessage) -> Self {
        Self {
            turn_index,
            message,
            ground_truth: None,
            predicted: None,
            agent_outputs: Vec::new(),
            trace: None,
        }
    }

    /// The labels this record contributes when scored as a prediction:
    /// `predicted` if present, otherwise `ground_truth`.
    pub fn labels(&self) -> Option<&IntentMultiset> {
        self.predicted.as_ref().or(self.ground_truth.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub team: Vec<TeamMember>,
    pub initial_backlog: Vec<Task>,
    pub turns: Vec<TurnRecord>,
}

impl Dialogue {
    pub fn initial_state(&self) -> Result<ProjectState, ModelError> {
        ProjectState::new(self.team.clone(), self.initial_backlog.clone())
    }
}
