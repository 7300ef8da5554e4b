//! Root policy: classify each message, route every classification, run the
//! chosen sub-policy, and speak only when a route calls for it.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tracing::{debug, warn};

use crate::backend::BackendHandle;
use crate::classifier::{Classification, Classifier};
use crate::model::{
    format_wire_time, ActionType, IntentMultiset, Message, MessageCategory, ProjectState, WireMessage, WorkflowKind,
    WorkflowState,
};
use crate::prompts::{PromptKind, PromptPack, PromptSlots};
use crate::toolbox::{get_conversation_history, AgentId, ToolError, ToolSession, Toolbox, DEFAULT_HISTORY_WINDOW};
use crate::trace::TurnTrace;
use crate::workflow::{self, StepContext, WorkflowError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Silent,
    TaskWorkflow,
    SummaryWorkflow,
    Fallback,
}

/// Reply used when a message reaches the fallback branch and no completion
/// backend is configured (or it fails).
pub const FALLBACK_TEMPLATE: &str = "I could not match this to an active workflow.";

pub fn route_action(action: ActionType, workflow: Option<&WorkflowState>) -> Route {
    match action {
        ActionType::NoAction | ActionType::UpdateContext => Route::Silent,
        ActionType::CreateTask => Route::TaskWorkflow,
        ActionType::GenerateSummary => Route::SummaryWorkflow,
        ActionType::ContinueWorkflow => match workflow.filter(|w| w.is_active).map(|w| w.kind) {
            Some(WorkflowKind::TaskWorkflow) => Route::TaskWorkflow,
            Some(WorkflowKind::SummaryWorkflow) => Route::SummaryWorkflow,
            None => Route::Fallback,
        },
    }
}

/// Result of one turn. The channel state is updated in place.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    /// Messages the agent sent; empty means it stayed silent.
    pub responses: Vec<String>,
    pub emitted: IntentMultiset,
    pub trace: TurnTrace,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("message rejected: {0}")]
    Ingest(#[source] ToolError),
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub classifier: Classifier,
    /// Completion backend for sub-agent reasoning and fallback replies.
    pub assistant: Option<BackendHandle>,
    pub prompts: PromptPack,
    pub history_window: usize,
    pub channel: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            classifier: Classifier::default(),
            assistant: None,
            prompts: PromptPack::default(),
            history_window: DEFAULT_HISTORY_WINDOW,
            channel: "general".to_string(),
        }
    }
}

impl EngineConfig {
    /// Uses `backend` for classification and for every sub-agent.
    pub fn with_backend(backend: BackendHandle) -> Self {
        Self {
            classifier: Classifier::Backend(backend.clone()),
            assistant: Some(backend),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Engine {
    pub config: EngineConfig,
    pub toolbox: Toolbox,
}

impl Engine {
    pub fn new(config: EngineConfig, toolbox: Toolbox) -> Self {
        let toolbox = toolbox.with_history_window(config.history_window);
        Self { config, toolbox }
    }

    /// Engine backed by a fresh in-memory PM store seeded with `backlog`.
    pub fn in_memory(config: EngineConfig, backlog: Vec<crate::model::Task>) -> Self {
        Self::new(config, Toolbox::in_memory(backlog))
    }

    /// Ingests a wire message and runs the policy on it.
    pub fn process(&self, state: &mut ProjectState, raw: &WireMessage) -> Result<TurnOutcome, EngineError> {
        let mut calls = Vec::new();
        let value = self
            .toolbox
            .invoke(
                AgentId::Root,
                "process_message",
                json!({
                    "user": raw.user,
                    "message": raw.message,
                    "time": raw.time,
                    "channel": self.config.channel,
                }),
                state,
                &mut calls,
                None,
            )
            .map_err(EngineError::Ingest)?;
        let message: Message = serde_json::from_value(value).expect("process_message returns a message");
        Ok(self.run_policy(state, &message, calls))
    }

    /// Runs the policy on a message that is already the newest in `state`.
    pub fn execute_policy(&self, state: &mut ProjectState, message: &Message) -> TurnOutcome {
        self.run_policy(state, message, Vec::new())
    }

    fn run_policy(
        &self,
        state: &mut ProjectState,
        message: &Message,
        mut calls: Vec<crate::trace::ToolCallRecord>,
    ) -> TurnOutcome {
        let mut trace = TurnTrace {
            turn: message.seq,
            channel: message.channel.clone(),
            ..TurnTrace::default()
        };
        let mut tools = ToolSession::new(&self.toolbox, &mut calls);

        if let Err(e) = tools.call(AgentId::Root, "get_tasks", json!({}), state) {
            warn!(error = %e, "backlog refresh failed, using cached backlog");
            trace.notes.push(format!("backlog refresh failed: {e}"));
        }

        let classifications =
            match self
                .config
                .classifier
                .classify(state, message, &self.config.prompts, self.config.history_window)
            {
                Ok(list) if !list.is_empty() => list,
                Ok(_) => degraded("classifier returned nothing", &mut trace),
                Err(e) => degraded(&e.to_string(), &mut trace),
            };
        let emitted: IntentMultiset = classifications.iter().map(Classification::intent).collect();

        let mut pending = Vec::new();
        for (i, cls) in classifications.iter().enumerate() {
            tools.step = Some(i);
            let route = route_action(cls.action, state.workflow.as_ref());
            debug!(step = i, category = %cls.category, action = %cls.action, ?route, "routing");
            trace.routes.push(route);
            let produced = match route {
                Route::Silent => {
                    if cls.action == ActionType::UpdateContext {
                        if let Err(e) = workflow::record_context_update(&mut tools, state, message) {
                            trace.notes.push(format!("context update failed: {e}"));
                        }
                    }
                    Vec::new()
                }
                Route::TaskWorkflow | Route::SummaryWorkflow => {
                    let mut ctx = StepContext {
                        tools: &mut tools,
                        assistant: self.config.assistant.as_ref(),
                        prompts: &self.config.prompts,
                    };
                    let result = if route == Route::TaskWorkflow {
                        workflow::task_step(&mut ctx, state, message, cls)
                    } else {
                        workflow::summary_step(&mut ctx, state, message, cls)
                    };
                    match result {
                        Ok(r) => r,
                        Err(ToolError::Workflow(WorkflowError::AlreadyActive(kind))) => vec![format!(
                            "There is already an active {kind}. Let's finish or cancel it first."
                        )],
                        Err(e) => {
                            warn!(error = %e, "sub-policy failed, falling back");
                            trace.notes.push(format!("{route:?} step failed: {e}"));
                            vec![self.generate_response(state, message)]
                        }
                    }
                }
                Route::Fallback => vec![self.generate_response(state, message)],
            };
            pending.extend(produced);
        }
        tools.step = None;

        let mut responses = Vec::new();
        for text in pending {
            let args = json!({
                "channel": message.channel,
                "text": text,
                "time": format_wire_time(&message.timestamp),
            });
            match tools.call(AgentId::Root, "send_message", args, state) {
                Ok(_) => responses.push(text),
                Err(e) => {
                    warn!(error = %e, "response not delivered");
                    trace.notes.push(format!("response not delivered: {e}"));
                }
            }
        }

        trace.classifications = classifications;
        trace.tool_calls = calls;
        trace.responses = responses.clone();
        trace.workflow_after = state.workflow.clone();
        trace.backlog_after = state.backlog.clone();
        TurnOutcome {
            responses,
            emitted,
            trace,
        }
    }

    /// Free-form reply for the fallback branch. Never fails.
    pub fn generate_response(&self, state: &ProjectState, message: &Message) -> String {
        let Some(backend) = &self.config.assistant else {
            return FALLBACK_TEMPLATE.to_string();
        };
        let history = get_conversation_history(state, self.config.history_window);
        let prompt = match self
            .config
            .prompts
            .render(PromptKind::Root, &PromptSlots::from_state(state, message, history))
        {
            Ok(p) => p,
            Err(e) => {
                warn!(error = %e, "root prompt rendering failed");
                return FALLBACK_TEMPLATE.to_string();
            }
        };
        let context = format!("Reply briefly to this message:\n{}", message.transcript_line());
        match backend.complete(&prompt, &context) {
            Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
            Ok(_) => FALLBACK_TEMPLATE.to_string(),
            Err(e) => {
                warn!(error = %e, "fallback completion failed");
                FALLBACK_TEMPLATE.to_string()
            }
        }
    }
}

fn degraded(reason: &str, trace: &mut TurnTrace) -> Vec<Classification> {
    warn!(reason, "classifier failure, staying silent");
    trace.classifier_failure = Some(reason.to_string());
    vec![Classification::new(
        MessageCategory::RegularConversation,
        ActionType::NoAction,
        "classifier failure",
    )]
}
