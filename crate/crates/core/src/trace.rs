//! Per-turn structured trace, written as one JSON line per turn.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::Classification;
use crate::model::{Task, WorkflowState};
use crate::orchestrator::Route;
use crate::toolbox::AgentId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolOutcome {
    Ok(Value),
    Error(String),
}

impl ToolOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, ToolOutcome::Ok(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub agent: AgentId,
    pub tool: String,
    pub args: Value,
    pub outcome: ToolOutcome,
    /// Whether the call changed the channel state.
    pub mutated: bool,
    /// Index of the classification being handled, `None` for turn-level calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub turn: u64,
    pub channel: String,
    pub classifications: Vec<Classification>,
    pub routes: Vec<Route>,
    pub tool_calls: Vec<ToolCallRecord>,
    pub responses: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier_failure: Option<String>,
    /// Workflow as left by this turn, including its flat scratch map.
    #[serde(default)]
    pub workflow_after: Option<WorkflowState>,
    #[serde(default)]
    pub backlog_after: Vec<Task>,
}

impl TurnTrace {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}
