//! Random message sequences through a live engine, checked turn by turn
//! against the workflow invariants.

use ambient_core::{Engine, EngineConfig, ProjectState, WorkflowKind, WorkflowState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fixtures::{backlog, state, wire};

pub const USERS: [&str; 5] = ["mchen", "ajones", "pkumar", "dramos", "sokafor"];

/// Weighted toward workflow traffic so most sequences open, feed and
/// close workflows.
pub const VOCAB: &[&str] = &[
    "new task: add audit log export",
    "new bug: login button misaligned on mobile",
    "we should add dark mode to the settings page",
    "description: details are in the thread",
    "priority: high",
    "assignee: @mchen",
    "priority: low, assignee: @pkumar, description: small one",
    "title: export audit log as CSV",
    "yes",
    "yes, looks good",
    "yes",
    "cancel that",
    "@devnous can you generate today's standup summary?",
    "blockers: waiting on review",
    "the bug fix for user profiles is almost done",
    "OAuth login is blocked on the provider keys",
    "@ajones can you take a look at this?",
    "assignee: @dramos, right @sokafor?",
    "lol",
    "anyone ordering lunch?",
];

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FsmStats {
    pub sequences: usize,
    pub turns: usize,
    pub tasks_created: usize,
    pub task_workflows_ended: usize,
    pub summary_workflows_ended: usize,
}

fn same_instance(a: &WorkflowState, b: &WorkflowState) -> bool {
    a.kind == b.kind && a.started_at == b.started_at && a.started_by == b.started_by
}

/// Runs one sequence of `(user, vocab)` index pairs.
pub fn check_sequence(steps: &[(usize, usize)], stats: &mut FsmStats) -> Result<(), String> {
    let engine = Engine::in_memory(EngineConfig::default(), backlog());
    let mut s: ProjectState = state();
    for (t, &(u, v)) in steps.iter().enumerate() {
        let before = s.clone();
        let text = VOCAB[v % VOCAB.len()];
        let ctx = |msg: &str| format!("turn {t} ({text:?}) after {:?}: {msg}", &steps[..t]);
        engine
            .process(&mut s, &wire(t, USERS[u % USERS.len()], text))
            .map_err(|e| ctx(&e.to_string()))?;
        stats.turns += 1;

        if let (Some(old), Some(new)) = (before.active_workflow(), s.active_workflow()) {
            if !same_instance(old, new) {
                return Err(ctx("an active workflow was replaced by another active workflow"));
            }
        }
        if let (Some(old), Some(new)) = (&before.workflow, &s.workflow) {
            if !old.is_active && same_instance(old, new) && old != new {
                return Err(ctx("an ended workflow was modified"));
            }
        }

        let created = match (&before.workflow, &s.workflow) {
            (Some(old), Some(new)) if old.is_active && !new.is_active && same_instance(old, new) => {
                match new.kind {
                    WorkflowKind::TaskWorkflow => stats.task_workflows_ended += 1,
                    WorkflowKind::SummaryWorkflow => stats.summary_workflows_ended += 1,
                }
                new.kind == WorkflowKind::TaskWorkflow
                    && new.result.get("status").map(String::as_str) == Some("created")
            }
            _ => false,
        };
        let grown = s.backlog.len() as i64 - before.backlog.len() as i64;
        if grown != i64::from(created) {
            return Err(ctx(&format!("backlog changed by {grown}, task created: {created}")));
        }
        if created {
            stats.tasks_created += 1;
            let task = s.backlog.last().unwrap();
            task.validate()
                .map_err(|e| ctx(&format!("created task invalid: {e}")))?;
            if before.backlog.iter().any(|b| b.id == task.id) {
                return Err(ctx("created task reuses an id"));
            }
            let draft_title = s.workflow.as_ref().and_then(|w| w.data.get("title"));
            if draft_title != Some(&task.name) {
                return Err(ctx(&format!(
                    "task name {:?} does not match draft {draft_title:?}",
                    task.name
                )));
            }
            let wanted = s.workflow.as_ref().and_then(|w| w.result.get("task_id"));
            if wanted != Some(&task.id) {
                return Err(ctx("workflow result does not name the created task"));
            }
        } else if s.backlog != before.backlog {
            return Err(ctx("backlog mutated without a task creation"));
        }
        let store = engine.toolbox.pm().get_tasks().map_err(|e| ctx(&e.to_string()))?;
        if store != s.backlog {
            return Err(ctx("backlog cache diverged from the PM store"));
        }
    }
    stats.sequences += 1;
    Ok(())
}

pub fn random_sequence(rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let len = rng.random_range(1..=24);
    (0..len)
        .map(|_| (rng.random_range(0..USERS.len()), rng.random_range(0..VOCAB.len())))
        .collect()
}

pub fn run_random_sequences(n: usize, seed: u64) -> Result<FsmStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = FsmStats::default();
    for _ in 0..n {
        check_sequence(&random_sequence(&mut rng), &mut stats)?;
    }
    Ok(stats)
}
