//! Shared fixtures for the benchmarks.

use std::path::{Path, PathBuf};

use ambient_core::evaluation::load_benchmark;
use ambient_core::toolbox::{load_backlog, load_roster};
use ambient_core::{ActionType as A, Dialogue, IntentMultiset, IntentTuple, MessageCategory as C, Task, TeamMember};

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn team() -> Vec<TeamMember> {
    load_roster(&data_dir().join("roster.json")).expect("roster loads")
}

pub fn backlog() -> Vec<Task> {
    load_backlog(&data_dir().join("backlog.json")).expect("backlog loads")
}

pub fn golden() -> Dialogue {
    load_benchmark(&data_dir().join("golden/golden_dialogue.jsonl"))
        .expect("golden dialogue loads")
        .remove(0)
}

const LABELS: [IntentTuple; 6] = [
    IntentTuple::new(C::WorkflowResponse, A::ContinueWorkflow),
    IntentTuple::new(C::NewTask, A::CreateTask),
    IntentTuple::new(C::SummaryTrigger, A::GenerateSummary),
    IntentTuple::new(C::RegularConversation, A::NoAction),
    IntentTuple::new(C::ExistingTask, A::UpdateContext),
    IntentTuple::new(C::ExistingTask, A::NoAction),
];

/// `n` aligned gold/predicted turns with 0 to 3 tuples each. Deterministic.
pub fn label_sets(n: usize) -> (Vec<IntentMultiset>, Vec<IntentMultiset>) {
    let bag = |seed: usize| (0..seed % 4).map(|k| LABELS[(seed * 7 + k * 3) % 6]).collect();
    (0..n).map(|i| (bag(i * 13 + 1), bag(i * 17 + 2))).unzip()
}
