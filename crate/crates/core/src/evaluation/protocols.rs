//! The two ways a dialogue is run against the engine.
//!
//! A live run keeps one engine and one channel state for the whole
//! dialogue, so each turn sees the agent's own earlier behaviour. A
//! stateless replay rebuilds the engine for every turn and hands it the
//! recorded transcript instead, so every system under comparison sees the
//! same history regardless of what it would have said itself.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    parse_wire_time, ActionType, Dialogue, IntentMultiset, IntentTuple, MessageCategory, ModelError, ProjectState,
    TurnRecord, WireMessage, AGENT_HANDLE,
};
use crate::orchestrator::{Engine, EngineConfig, EngineError, TurnOutcome};

use super::metrics::LengthMismatch;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("dialogue {dialogue}: {source}")]
    Setup {
        dialogue: String,
        #[source]
        source: ModelError,
    },
    #[error("dialogue {dialogue}, turn {turn}: {source}")]
    Turn {
        dialogue: String,
        turn: usize,
        #[source]
        source: EngineError,
    },
    #[error("dialogue {dialogue}, turn {turn}: no ground truth")]
    MissingLabels { dialogue: String, turn: usize },
    #[error(transparent)]
    Length(#[from] LengthMismatch),
}

/// One persistent engine instance working through a dialogue.
pub struct LiveSession {
    engine: Engine,
    state: ProjectState,
    log: Dialogue,
}

impl LiveSession {
    pub fn new(config: &EngineConfig, template: &Dialogue) -> Result<Self, ProtocolError> {
        let state = template.initial_state().map_err(|source| ProtocolError::Setup {
            dialogue: template.id.clone(),
            source,
        })?;
        Ok(Self {
            engine: Engine::in_memory(config.clone(), template.initial_backlog.clone()),
            state,
            log: Dialogue {
                turns: Vec::new(),
                ..template.clone()
            },
        })
    }

    pub fn state(&self) -> &ProjectState {
        &self.state
    }

    /// Runs one human turn and appends it to the log.
    pub fn step(&mut self, raw: &WireMessage) -> Result<(&TurnRecord, TurnOutcome), ProtocolError> {
        let turn = self.log.turns.len();
        let outcome = self
            .engine
            .process(&mut self.state, raw)
            .map_err(|source| ProtocolError::Turn {
                dialogue: self.log.id.clone(),
                turn,
                source,
            })?;
        self.log.turns.push(TurnRecord {
            turn_index: turn,
            message: raw.clone(),
            ground_truth: None,
            predicted: Some(outcome.emitted.clone()),
            agent_outputs: outcome.responses.clone(),
            trace: Some(outcome.trace.clone()),
        });
        Ok((self.log.turns.last().unwrap(), outcome))
    }

    pub fn finish(self) -> Dialogue {
        self.log
    }
}

/// Live protocol over the human turns of `source`. Ground truth is carried
/// over; predictions, agent outputs and traces are this run's.
pub fn run_live(config: &EngineConfig, source: &Dialogue) -> Result<Dialogue, ProtocolError> {
    let mut session = LiveSession::new(config, source)?;
    for turn in &source.turns {
        session.step(&turn.message)?;
    }
    let mut log = session.finish();
    for (out, src) in log.turns.iter_mut().zip(&source.turns) {
        out.turn_index = src.turn_index;
        out.ground_truth = src.ground_truth.clone();
    }
    Ok(log)
}

fn failure_label() -> IntentMultiset {
    IntentMultiset::single(IntentTuple::new(
        MessageCategory::RegularConversation,
        ActionType::NoAction,
    ))
}

/// Channel state as it stood just before turn `t` of a recorded dialogue.
///
/// History is the verbatim transcript: every earlier human message
/// followed by the agent outputs recorded for it. Backlog and workflow
/// come from the previous turn's trace when the log has one; otherwise
/// they are rebuilt by running a scratch engine over the earlier human
/// turns, whose own messages are then discarded.
pub fn context_before(config: &EngineConfig, dialogue: &Dialogue, t: usize) -> Result<ProjectState, ProtocolError> {
    let setup = |source| ProtocolError::Setup {
        dialogue: dialogue.id.clone(),
        source,
    };
    let mut state = dialogue.initial_state().map_err(setup)?;
    match t.checked_sub(1).and_then(|p| dialogue.turns[p].trace.as_ref()) {
        Some(trace) => {
            state.backlog = trace.backlog_after.clone();
            state.workflow = trace.workflow_after.clone();
        }
        None if t > 0 => {
            let scratch = Engine::in_memory(config.clone(), dialogue.initial_backlog.clone());
            for turn in &dialogue.turns[..t] {
                // a turn the engine rejects contributes nothing to state
                let _ = scratch.process(&mut state, &turn.message);
            }
            state.history.clear();
        }
        None => {}
    }
    state.history.clear();
    let channel = config.channel.as_str();
    for turn in &dialogue.turns[..t] {
        let at = parse_wire_time(&turn.message.time).map_err(setup)?;
        state.push_message(turn.message.user.trim(), &turn.message.message, at, channel);
        for output in &turn.agent_outputs {
            state.push_message(AGENT_HANDLE, output, at, channel);
        }
    }
    Ok(state)
}

fn replay_turn(config: &EngineConfig, dialogue: &Dialogue, t: usize) -> TurnRecord {
    let source = &dialogue.turns[t];
    let mut record = TurnRecord {
        predicted: Some(failure_label()),
        agent_outputs: Vec::new(),
        trace: None,
        ..source.clone()
    };
    let mut state = match context_before(config, dialogue, t) {
        Ok(s) => s,
        Err(e) => {
            tracing::warn!(error = %e, turn = t, "stateless context rebuild failed");
            return record;
        }
    };
    let engine = Engine::in_memory(config.clone(), state.backlog.clone());
    match engine.process(&mut state, &source.message) {
        Ok(outcome) => {
            record.predicted = Some(outcome.emitted);
            record.agent_outputs = outcome.responses;
            record.trace = Some(outcome.trace);
        }
        Err(e) => tracing::warn!(error = %e, turn = t, "stateless turn failed"),
    }
    record
}

/// Stateless protocol. Turns are independent and run in parallel; a turn
/// the engine rejects is predicted as regular conversation and carries no
/// trace.
pub fn replay_stateless(config: &EngineConfig, dialogue: &Dialogue) -> Dialogue {
    let turns = (0..dialogue.turns.len())
        .into_par_iter()
        .map(|t| replay_turn(config, dialogue, t))
        .collect();
    Dialogue {
        turns,
        ..dialogue.clone()
    }
}

pub fn replay_stateless_all(config: &EngineConfig, dialogues: &[Dialogue]) -> Vec<Dialogue> {
    dialogues.par_iter().map(|d| replay_stateless(config, d)).collect()
}

pub fn run_live_all(config: &EngineConfig, dialogues: &[Dialogue]) -> Result<Vec<Dialogue>, ProtocolError> {
    dialogues.par_iter().map(|d| run_live(config, d)).collect()
}

/// Gold bags in dialogue-then-turn order. Every turn must be labelled.
pub fn gold_labels(dialogues: &[Dialogue]) -> Result<Vec<IntentMultiset>, ProtocolError> {
    dialogues
        .iter()
        .flat_map(|d| d.turns.iter().map(move |t| (d, t)))
        .map(|(d, t)| {
            t.ground_truth.clone().ok_or_else(|| ProtocolError::MissingLabels {
                dialogue: d.id.clone(),
                turn: t.turn_index,
            })
        })
        .collect()
}

/// Prediction bags in dialogue-then-turn order: `predicted` where present,
/// else `ground_truth` (so an annotation file can stand in for a run).
pub fn predicted_labels(dialogues: &[Dialogue]) -> Result<Vec<IntentMultiset>, ProtocolError> {
    dialogues
        .iter()
        .flat_map(|d| d.turns.iter().map(move |t| (d, t)))
        .map(|(d, t)| {
            t.labels().cloned().ok_or_else(|| ProtocolError::MissingLabels {
                dialogue: d.id.clone(),
                turn: t.turn_index,
            })
        })
        .collect()
}
