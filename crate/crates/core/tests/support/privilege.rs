//! Every agent against every standard tool.

use std::collections::BTreeMap;
use std::sync::Arc;

use ambient_core::toolbox::{InMemoryChat, InMemoryPm, PmAdapter, STANDARD_TOOLS};
use ambient_core::{AgentId, ProjectState, ToolError, ToolOutcome, ToolRegistry, Toolbox, WorkflowKind, WorkflowState};
use chrono::{TimeZone, Utc};
use serde_json::{json, Value};

use super::fixtures::{backlog, data_dir, state};

/// Arguments that would succeed for a granted caller.
pub fn sample_args(tool: &str) -> Value {
    match tool {
        "memorize_string" => json!({"key": "k", "value": "v"}),
        "get_conversation_history" => json!({"n": 5}),
        "load_team_info" => json!({"path": data_dir().join("roster.json").display().to_string()}),
        "process_message" => {
            json!({"user": "mchen", "message": "hello", "time": "12-03-2025 10:00:00", "channel": "general"})
        }
        "send_message" => json!({"channel": "general", "text": "hi all"}),
        "create_task" => json!({"name": "Write runbook", "description": "ops", "assignee": "mchen"}),
        "update_task" => json!({"id": "T-0101", "delta": {"list_name": "Done"}}),
        "start_workflow" => json!({"workflow_type": "summary_workflow", "initial_data_json": "{}"}),
        "update_workflow_data" => json!({"updates_json": "{\"priority\": \"High\"}"}),
        "end_workflow" => json!({"result_json": "{\"status\": \"abandoned\"}"}),
        _ => json!({}),
    }
}

/// A channel with history, memory and an active task workflow, so that
/// every tool has something it could change.
pub fn busy_state() -> ProjectState {
    let mut s = state();
    s.team.truncate(3);
    s.memory.insert("seed".into(), "1".into());
    s.workflow = Some(WorkflowState {
        kind: WorkflowKind::TaskWorkflow,
        is_active: true,
        data: BTreeMap::from([("title".to_string(), "Draft".to_string())]),
        started_by: "ajones".into(),
        started_at: Utc.with_ymd_and_hms(2025, 3, 12, 9, 0, 0).unwrap(),
        result: BTreeMap::new(),
    });
    s
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Sweep {
    pub cells: usize,
    pub denied: usize,
    pub granted: usize,
}

pub fn sweep() -> Result<Sweep, String> {
    let mut out = Sweep::default();
    let registry = ToolRegistry::standard();
    for agent in AgentId::ALL {
        for tool in STANDARD_TOOLS.iter().map(|d| d.name) {
            out.cells += 1;
            let pm = Arc::new(InMemoryPm::seeded(backlog()));
            let chat = Arc::new(InMemoryChat::default());
            let toolbox = Toolbox::new(registry.clone(), pm.clone(), chat.clone());
            let mut s = busy_state();
            let before = s.clone();
            let store_before = pm.get_tasks().map_err(|e| e.to_string())?;
            let mut trace = Vec::new();
            let result = toolbox.invoke(agent, tool, sample_args(tool), &mut s, &mut trace, None);
            let cell = format!("{agent} x {tool}");
            if trace.len() != 1 {
                return Err(format!("{cell}: expected one trace record, got {}", trace.len()));
            }
            if registry.is_granted(agent, tool) {
                out.granted += 1;
                if let Err(e @ ToolError::PermissionDenied { .. }) = &result {
                    return Err(format!("{cell}: granted call denied: {e}"));
                }
                continue;
            }
            out.denied += 1;
            match &result {
                Err(ToolError::PermissionDenied { agent: a, tool: t }) if *a == agent && t == tool => {}
                other => return Err(format!("{cell}: expected PermissionDenied, got {other:?}")),
            }
            if s != before {
                return Err(format!("{cell}: denied call changed the channel state"));
            }
            if pm.get_tasks().map_err(|e| e.to_string())? != store_before {
                return Err(format!("{cell}: denied call changed the PM store"));
            }
            if !chat.sent().is_empty() {
                return Err(format!("{cell}: denied call delivered a chat message"));
            }
            let rec = &trace[0];
            if rec.mutated || matches!(rec.outcome, ToolOutcome::Ok(_)) {
                return Err(format!("{cell}: trace records a denied call as effective"));
            }
        }
    }
    Ok(out)
}
