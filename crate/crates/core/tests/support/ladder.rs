//! The routing ladder written out as a table.

use std::collections::BTreeMap;

use ambient_core::{route_action, ActionType as A, Route as R, WorkflowKind, WorkflowState};
use chrono::{TimeZone, Utc};

pub fn workflow(kind: WorkflowKind, is_active: bool) -> WorkflowState {
    WorkflowState {
        kind,
        is_active,
        data: BTreeMap::new(),
        started_by: "mchen".into(),
        started_at: Utc.with_ymd_and_hms(2025, 3, 12, 9, 0, 0).unwrap(),
        result: BTreeMap::new(),
    }
}

#[derive(Clone, Copy, Debug)]
pub enum W {
    None,
    Task,
    Summary,
}

#[rustfmt::skip]
pub const TABLE: [(A, W, R); 15] = [
    (A::NoAction,         W::None,    R::Silent),
    (A::NoAction,         W::Task,    R::Silent),
    (A::NoAction,         W::Summary, R::Silent),
    (A::UpdateContext,    W::None,    R::Silent),
    (A::UpdateContext,    W::Task,    R::Silent),
    (A::UpdateContext,    W::Summary, R::Silent),
    (A::CreateTask,       W::None,    R::TaskWorkflow),
    (A::CreateTask,       W::Task,    R::TaskWorkflow),
    (A::CreateTask,       W::Summary, R::TaskWorkflow),
    (A::GenerateSummary,  W::None,    R::SummaryWorkflow),
    (A::GenerateSummary,  W::Task,    R::SummaryWorkflow),
    (A::GenerateSummary,  W::Summary, R::SummaryWorkflow),
    (A::ContinueWorkflow, W::None,    R::Fallback),
    (A::ContinueWorkflow, W::Task,    R::TaskWorkflow),
    (A::ContinueWorkflow, W::Summary, R::SummaryWorkflow),
];

/// Checks every row; returns the number of cases.
pub fn check() -> Result<usize, String> {
    if TABLE.len() != A::ALL.len() * 3 {
        return Err(format!("table has {} rows for {} actions", TABLE.len(), A::ALL.len()));
    }
    for (action, w, expected) in TABLE {
        let state = match w {
            W::None => None,
            W::Task => Some(workflow(WorkflowKind::TaskWorkflow, true)),
            W::Summary => Some(workflow(WorkflowKind::SummaryWorkflow, true)),
        };
        let got = route_action(action, state.as_ref());
        if got != expected {
            return Err(format!("{action:?} with {w:?}: {got:?}, expected {expected:?}"));
        }
    }
    Ok(TABLE.len())
}
