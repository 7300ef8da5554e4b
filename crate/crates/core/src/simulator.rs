//! Synthetic dialogue generation.
//!
//! A generator backend plays the team: each turn it sees the whole
//! conversation so far, agent replies included, and writes one message as
//! a roster member. The engine answers, and the exchange is logged in the
//! benchmark format with `ground_truth` left empty for annotation.

use std::sync::{LazyLock, Mutex};

use chrono::{Duration, NaiveDate};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use crate::backend::{extract_json, BackendError, BackendHandle, CompletionBackend};
use crate::evaluation::protocols::{LiveSession, ProtocolError};
use crate::model::{format_wire_time, parse_wire_time, Dialogue, Message, Task, TeamMember, WireMessage, AGENT_HANDLE};
use crate::orchestrator::EngineConfig;
use crate::prompts::{render_tasks, render_team, PromptKind, PromptPack, PromptSlots};

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub n_dialogues: usize,
    pub turns_per_dialogue: usize,
    pub team: Vec<TeamMember>,
    pub backlog: Vec<Task>,
    pub prompts: PromptPack,
    /// Seed for the scripted generator; dialogue `i` uses `seed + i`.
    pub seed: u64,
    /// Consecutive generation failures after which a dialogue is dropped.
    pub max_consecutive_failures: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_dialogues: 8,
            turns_per_dialogue: 20,
            team: Vec::new(),
            backlog: Vec::new(),
            prompts: PromptPack::default(),
            seed: 7,
            max_consecutive_failures: 3,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("generator spoke as the agent twice in a row")]
    Impersonation,
    #[error("generator reply rejected at `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn violation(field: &str, reason: impl Into<String>) -> SimError {
    SimError::SchemaViolation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// One generator call, kept for auditing path dependence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub dialogue: String,
    pub turn: usize,
    pub attempt: usize,
    pub prompt: String,
    pub context: String,
    pub response: Result<String, String>,
}

/// Transcript handed to the generator: every prior message, then the
/// turn counter so it can tell when the day is ending.
pub fn render_context(history: &[Message], turn: usize, total: usize) -> String {
    let mut out = String::from("CONVERSATION SO FAR:\n");
    if history.is_empty() {
        out.push_str("(the conversation has not started yet)\n");
    }
    for m in history {
        out.push_str(&m.transcript_line());
        out.push('\n');
    }
    out.push_str(&format!("\nThis is message {} of {}.", turn + 1, total));
    out
}

fn parse_generated(raw: &str, team: &[TeamMember]) -> Result<WireMessage, SimError> {
    let value = extract_json(raw).ok_or_else(|| violation("$", "no JSON object found"))?;
    let obj = value.as_object().ok_or_else(|| violation("$", "expected an object"))?;
    let text = |k: &str| match obj.get(k) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(_) => Err(violation(k, "expected a non-empty string")),
        None => Err(violation(k, "missing")),
    };
    let user = text("user")?.trim_start_matches('@').to_string();
    let message = text("message")?;
    let time = text("time")?;
    if user.eq_ignore_ascii_case(AGENT_HANDLE) {
        return Err(SimError::Impersonation);
    }
    let member = team
        .iter()
        .find(|m| m.handle.eq_ignore_ascii_case(&user))
        .ok_or_else(|| violation("user", format!("`{user}` is not on the roster")))?;
    parse_wire_time(&time).map_err(|e| violation("time", e.to_string()))?;
    Ok(WireMessage::new(member.handle.clone(), message, time))
}

/// Asks the generator for one message, re-prompting once on a bad reply.
pub fn generate_turn(
    backend: &BackendHandle,
    prompt: &str,
    context: &str,
    team: &[TeamMember],
    mut audit: impl FnMut(usize, &str, Result<String, String>),
) -> Result<WireMessage, SimError> {
    let mut impersonations = 0;
    let mut last = None;
    for attempt in 0..2 {
        let ctx = match &last {
            None => context.to_string(),
            Some(err) => format!(
                "{context}\n\nYour previous reply was rejected ({err}). Reply with one JSON message from a team member."
            ),
        };
        let reply = backend.complete(prompt, &ctx);
        audit(attempt, &ctx, reply.clone().map_err(|e| e.to_string()));
        let result = reply
            .map_err(SimError::from)
            .and_then(|raw| parse_generated(&raw, team));
        match result {
            Ok(m) => return Ok(m),
            Err(e) => {
                if e == SimError::Impersonation {
                    impersonations += 1;
                }
                warn!(attempt, error = %e, "generator reply rejected");
                last = Some(e);
            }
        }
    }
    if impersonations == 2 {
        return Err(SimError::Impersonation);
    }
    Err(last.expect("two failed attempts"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AbortedDialogue {
    pub id: String,
    pub turns_completed: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct SimulationOutput {
    pub dialogues: Vec<Dialogue>,
    pub audit: Vec<AuditEntry>,
    pub aborted: Vec<AbortedDialogue>,
}

pub fn dialogue_id(index: usize) -> String {
    format!("sim-{:02}", index + 1)
}

enum DialogueResult {
    Done(Dialogue, Vec<AuditEntry>),
    Aborted(AbortedDialogue, Vec<AuditEntry>),
}

fn simulate_one(
    index: usize,
    config: &SimulationConfig,
    engine: &EngineConfig,
    backend: BackendHandle,
) -> Result<DialogueResult, ProtocolError> {
    let id = dialogue_id(index);
    let template = Dialogue {
        id: id.clone(),
        team: config.team.clone(),
        initial_backlog: config.backlog.clone(),
        turns: Vec::new(),
    };
    let mut session = LiveSession::new(engine, &template)?;
    let mut audit = Vec::new();
    let mut failures = 0;
    let mut turn = 0;
    while turn < config.turns_per_dialogue {
        let mut slots = PromptSlots::default();
        slots
            .set("team_members", render_team(&config.team))
            .set("trello_tasks", render_tasks(&session.state().backlog));
        let prompt = match config.prompts.render(PromptKind::Simulator, &slots) {
            Ok(p) => p,
            Err(e) => {
                return Ok(DialogueResult::Aborted(
                    AbortedDialogue {
                        id,
                        turns_completed: turn,
                        reason: e.to_string(),
                    },
                    audit,
                ))
            }
        };
        let context = render_context(&session.state().history, turn, config.turns_per_dialogue);
        let generated = generate_turn(&backend, &prompt, &context, &config.team, |attempt, ctx, response| {
            audit.push(AuditEntry {
                dialogue: id.clone(),
                turn,
                attempt,
                prompt: prompt.clone(),
                context: ctx.to_string(),
                response,
            })
        });
        let message = match generated {
            Ok(m) => m,
            Err(e) => {
                failures += 1;
                if failures >= config.max_consecutive_failures {
                    return Ok(DialogueResult::Aborted(
                        AbortedDialogue {
                            id,
                            turns_completed: turn,
                            reason: e.to_string(),
                        },
                        audit,
                    ));
                }
                continue;
            }
        };
        failures = 0;
        session.step(&message)?;
        turn += 1;
    }
    Ok(DialogueResult::Done(session.finish(), audit))
}

/// Generates `n_dialogues` dialogues concurrently. `backend_for(i)` gives
/// the generator for dialogue `i`; turns within a dialogue are serial.
pub fn run_simulation(
    config: &SimulationConfig,
    engine: &EngineConfig,
    backend_for: &(dyn Fn(usize) -> BackendHandle + Sync),
) -> Result<SimulationOutput, ProtocolError> {
    let results: Vec<DialogueResult> = (0..config.n_dialogues)
        .into_par_iter()
        .map(|i| simulate_one(i, config, engine, backend_for(i)))
        .collect::<Result<_, _>>()?;
    let mut out = SimulationOutput::default();
    for r in results {
        match r {
            DialogueResult::Done(d, a) => {
                out.dialogues.push(d);
                out.audit.extend(a);
            }
            DialogueResult::Aborted(d, a) => {
                warn!(dialogue = %d.id, reason = %d.reason, "dialogue aborted");
                out.aborted.push(d);
                out.audit.extend(a);
            }
        }
    }
    Ok(out)
}

static TRANSCRIPT_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\[(\d{2}-\d{2}-\d{4} \d{2}:\d{2}:\d{2})\] ([^:]+): (.*)$").unwrap());
static PROGRESS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"This is message (\d+) of (\d+)\.").unwrap());
static NEED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"I still need: ([a-z, ]+)\.").unwrap());
static ADDRESSED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\n@([A-Za-z0-9_.\-]+) is anything missing").unwrap());

const SUMMARY_REQUEST: &str = "@devnous can you generate today's team summary?";
const REACTIONS: &[&str] = &[
    "+1",
    "same",
    "lol",
    "nice",
    "yep",
    "agreed",
    "brb",
    "coffee time",
    "hmm",
    "ugh",
];
const CASUAL: &[&str] = &[
    "anyone ordering lunch?",
    "GH Actions has a 90s delay today, deploys feel slow",
    "who moved the standup to 9:30",
    "my laptop fan sounds like a jet engine",
    "anyone else seeing slow deploys?",
    "the office coffee machine is broken again",
];
const PROGRESS_TEMPLATES: &[&str] = &[
    "{task} is almost there, just polishing",
    "finished the first pass on {task}",
    "stuck on {task}, waiting on review",
    "will pick up {task} tomorrow",
    "pushed a fix for {task}",
];
const PROPOSALS: &[&str] = &[
    "we should add a visual regression test before the polish sprint starts",
    "new bug: dropdown overlaps footer on screens under 640px",
    "we need to add rate limiting to the public API",
    "new bug: auth tokens expiring mid-request",
    "feature request: export reports as CSV",
    "we should build a status page for outages",
];
const DESCRIPTIONS: &[&str] = &[
    "repro steps are in the thread above",
    "users keep hitting this in production",
    "should cover the main flows first",
    "small scope, one sprint at most",
];

/// Deterministic stand-in for a generator model.
///
/// Answers the agent's questions as the person it addressed (supplying
/// the missing fields, confirming recaps and summaries) and otherwise
/// produces seeded small talk, progress updates on backlog tasks, new
/// work proposals and, near the end, a summary request.
pub struct ScriptedSga {
    handles: Vec<String>,
    task_names: Vec<String>,
    day: NaiveDate,
    rng: Mutex<ChaCha8Rng>,
}

impl ScriptedSga {
    pub fn new(team: &[TeamMember], backlog: &[Task], seed: u64) -> Self {
        Self {
            handles: team.iter().map(|m| m.handle.clone()).collect(),
            task_names: backlog.iter().map(|t| t.name.clone()).collect(),
            day: NaiveDate::from_ymd_opt(2025, 3, 10).unwrap() + Duration::days((seed % 20) as i64),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    fn compose(&self, context: &str) -> (String, String) {
        let mut rng = self.rng.lock().unwrap();
        let lines: Vec<(String, String)> = context
            .lines()
            .filter_map(|l| {
                TRANSCRIPT_LINE
                    .captures(l)
                    .map(|c| (c[2].to_string(), c[3].to_string()))
            })
            .collect();
        let (turn, total) = PROGRESS
            .captures(context)
            .map(|c| (c[1].parse::<usize>().unwrap_or(1), c[2].parse::<usize>().unwrap_or(20)))
            .unwrap_or((1, 20));
        let pick = |rng: &mut ChaCha8Rng, items: &[String]| items.choose(rng).cloned().unwrap_or_default();
        let last_human = lines
            .iter()
            .rev()
            .find(|(u, _)| u != AGENT_HANDLE)
            .map(|(u, _)| u.clone());
        let asker = last_human.clone().unwrap_or_else(|| pick(&mut rng, &self.handles));

        // everything the agent said since the last human message
        let tail = lines.last().filter(|(u, _)| u == AGENT_HANDLE).map(|_| {
            let agent_prefix = format!("] {AGENT_HANDLE}: ");
            let mut offset = 0;
            let mut from = 0;
            for line in context.split_inclusive('\n') {
                if TRANSCRIPT_LINE.is_match(line.trim_end()) && !line.contains(&agent_prefix) {
                    from = offset + line.len();
                }
                offset += line.len();
            }
            context[from..].to_string()
        });

        if let Some(tail) = tail {
            if let Some(c) = NEED.captures(&tail) {
                let mut parts = Vec::new();
                for field in c[1].split(", ") {
                    let value = match field.trim() {
                        "title" => "title: improve onboarding checklist".to_string(),
                        "description" => format!("description: {}", DESCRIPTIONS.choose(&mut *rng).unwrap()),
                        "priority" => format!("priority: {}", ["High", "Medium", "Low"].choose(&mut *rng).unwrap()),
                        "assignee" => format!("assignee: @{}", pick(&mut rng, &self.handles)),
                        _ => continue,
                    };
                    parts.push(value);
                }
                return (asker, parts.join(", "));
            }
            if tail.contains("Shall I create it?") || tail.contains("Please reply yes to create") {
                return (asker, "yes, create it".to_string());
            }
            if let Some(c) = ADDRESSED.captures(&tail) {
                let who = self
                    .handles
                    .iter()
                    .find(|h| h.eq_ignore_ascii_case(&c[1]))
                    .cloned()
                    .unwrap_or(asker);
                return (who, "yes, looks good".to_string());
            }
            if tail.contains("Please reply yes to confirm") {
                return (asker, "yes".to_string());
            }
        }

        let speaker = pick(&mut rng, &self.handles);
        // one summary request in the last few turns, once the agent is free
        let asked = context.contains(SUMMARY_REQUEST);
        if !asked && total >= 3 && turn + 4 >= total && turn + 1 < total {
            return (speaker, SUMMARY_REQUEST.to_string());
        }
        let roll: f64 = rng.random();
        let text = if roll < 0.2 {
            REACTIONS.choose(&mut *rng).unwrap().to_string()
        } else if roll < 0.4 {
            CASUAL.choose(&mut *rng).unwrap().to_string()
        } else if roll < 0.7 && !self.task_names.is_empty() {
            let task = pick(&mut rng, &self.task_names);
            PROGRESS_TEMPLATES
                .choose(&mut *rng)
                .unwrap()
                .replace("{task}", &task.to_lowercase())
        } else if roll < 0.8 && self.handles.len() > 1 {
            let other = self
                .handles
                .iter()
                .filter(|h| **h != speaker)
                .cloned()
                .collect::<Vec<_>>();
            format!("@{} how's it going on your side?", pick(&mut rng, &other))
        } else {
            PROPOSALS.choose(&mut *rng).unwrap().to_string()
        };
        (speaker, text)
    }
}

impl CompletionBackend for ScriptedSga {
    fn complete(&self, _prompt: &str, context: &str) -> Result<String, BackendError> {
        if self.handles.is_empty() {
            return Err(BackendError("empty roster".into()));
        }
        let (turn, _) = PROGRESS
            .captures(context)
            .map(|c| (c[1].parse::<i64>().unwrap_or(1), ()))
            .unwrap_or((1, ()));
        let (user, message) = self.compose(context);
        let at = self.day.and_hms_opt(9, 0, 0).unwrap().and_utc() + Duration::minutes(3 * turn);
        Ok(serde_json::json!({"user": user, "message": message, "time": format_wire_time(&at)}).to_string())
    }

    fn name(&self) -> &str {
        "scripted-sga"
    }
}
