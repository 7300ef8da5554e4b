//! Ambient project-management agent.
//!
//! The engine watches a team chat channel, labels every message with an
//! actionable intent, and either stays silent, records context, or drives
//! a human-in-the-loop workflow that turns chat into backlog tasks and
//! standup summaries. The [`evaluation`] module scores intent predictions
//! against annotated dialogues, and [`simulator`] generates those
//! dialogues by letting a simulated team talk to the engine.

pub mod backend;
pub mod classifier;
pub mod evaluation;
pub mod model;
pub mod orchestrator;
pub mod prompts;
pub mod simulator;
pub mod text;
pub mod toolbox;
pub mod trace;
pub mod workflow;

pub use backend::{BackendError, BackendHandle, CompletionBackend, ScriptedBackend};
pub use classifier::{Classification, Classifier, ClassifierError, RuleSet, SchemaViolation};
pub use model::*;
pub use orchestrator::{route_action, Engine, EngineConfig, EngineError, Route, TurnOutcome, FALLBACK_TEMPLATE};
pub use prompts::{PromptKind, PromptPack};
pub use simulator::{run_simulation, ScriptedSga, SimError, SimulationConfig, SimulationOutput};
pub use toolbox::{AgentId, ToolError, ToolRegistry, Toolbox};
pub use trace::{ToolCallRecord, ToolOutcome, TurnTrace};
pub use workflow::{TaskDraft, WorkflowError};
