//! Agent instruction prompts and slot rendering.
//!
//! Templates use `{name}` slots; `{{` and `}}` render as literal braces.
//! Any other brace is copied through, so JSON examples inside a prompt
//! need no escaping.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::model::{format_wire_time, Message, ProjectState, Task, TeamMember, WorkflowState};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt slot `{0}` has no value")]
    MissingSlot(String),
    #[error("cannot read prompt file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Root,
    Classifier,
    TaskCreator,
    SummaryGenerator,
    Simulator,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] = [
        PromptKind::Root,
        PromptKind::Classifier,
        PromptKind::TaskCreator,
        PromptKind::SummaryGenerator,
        PromptKind::Simulator,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::Root => "root.txt",
            PromptKind::Classifier => "classifier.txt",
            PromptKind::TaskCreator => "task_creator.txt",
            PromptKind::SummaryGenerator => "summary_generator.txt",
            PromptKind::Simulator => "sga.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptKind::Root => include_str!("../prompts/root.txt"),
            PromptKind::Classifier => include_str!("../prompts/classifier.txt"),
            PromptKind::TaskCreator => include_str!("../prompts/task_creator.txt"),
            PromptKind::SummaryGenerator => include_str!("../prompts/summary_generator.txt"),
            PromptKind::Simulator => include_str!("../prompts/sga.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPack {
    pub root: String,
    pub classifier: String,
    pub task_creator: String,
    pub summary_generator: String,
    pub simulator: String,
}

impl Default for PromptPack {
    fn default() -> Self {
        Self {
            root: PromptKind::Root.builtin().to_string(),
            classifier: PromptKind::Classifier.builtin().to_string(),
            task_creator: PromptKind::TaskCreator.builtin().to_string(),
            summary_generator: PromptKind::SummaryGenerator.builtin().to_string(),
            simulator: PromptKind::Simulator.builtin().to_string(),
        }
    }
}

impl PromptPack {
    /// Loads `<dir>/<kind>.txt` for each prompt; absent files keep the
    /// built-in text.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut pack = Self::default();
        for kind in PromptKind::ALL {
            let path = dir.join(kind.file_name());
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            *pack.get_mut(kind) = text;
        }
        Ok(pack)
    }

    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for kind in PromptKind::ALL {
            std::fs::write(dir.join(kind.file_name()), self.get(kind))?;
        }
        Ok(())
    }

    pub fn get(&self, kind: PromptKind) -> &str {
        match kind {
            PromptKind::Root => &self.root,
            PromptKind::Classifier => &self.classifier,
            PromptKind::TaskCreator => &self.task_creator,
            PromptKind::SummaryGenerator => &self.summary_generator,
            PromptKind::Simulator => &self.simulator,
        }
    }

    fn get_mut(&mut self, kind: PromptKind) -> &mut String {
        match kind {
            PromptKind::Root => &mut self.root,
            PromptKind::Classifier => &mut self.classifier,
            PromptKind::TaskCreator => &mut self.task_creator,
            PromptKind::SummaryGenerator => &mut self.summary_generator,
            PromptKind::Simulator => &mut self.simulator,
        }
    }

    pub fn render(&self, kind: PromptKind, slots: &PromptSlots) -> Result<String, PromptError> {
        render(self.get(kind), &slots.0)
    }
}

/// Slot values for one rendering.
#[derive(Debug, Clone, Default)]
pub struct PromptSlots(pub BTreeMap<String, String>);

impl PromptSlots {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> &mut Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    /// Fills every agent slot from the channel state. `history` is the
    /// window already selected by the caller.
    pub fn from_state(state: &ProjectState, now: &Message, history: &[Message]) -> Self {
        let mut slots = Self::default();
        let team = render_team(&state.team);
        slots
            .set("team_info", team.clone())
            .set("team_members", team)
            .set("_time", format_wire_time(&now.timestamp))
            .set("trello_tasks", render_tasks(&state.backlog))
            .set("workflow_state", render_workflow(state.workflow.as_ref()))
            .set("conversation_history", render_history(history));
        slots
    }
}

pub fn render_team(team: &[TeamMember]) -> String {
    if team.is_empty() {
        return "(no team members loaded)".to_string();
    }
    serde_json::to_string_pretty(team).expect("team serializes")
}

pub fn render_tasks(backlog: &[Task]) -> String {
    if backlog.is_empty() {
        return "(no tasks)".to_string();
    }
    serde_json::to_string_pretty(backlog).expect("tasks serialize")
}

pub fn render_workflow(workflow: Option<&WorkflowState>) -> String {
    match workflow {
        Some(w) if w.is_active => serde_json::to_string_pretty(w).expect("workflow serializes"),
        _ => "No active workflow".to_string(),
    }
}

pub fn render_history(history: &[Message]) -> String {
    if history.is_empty() {
        return "(no messages yet)".to_string();
    }
    history
        .iter()
        .map(Message::transcript_line)
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render(template: &str, slots: &BTreeMap<String, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
            continue;
        }
        if tail.starts_with('{') {
            if let Some(end) = tail.find('}') {
                let name = &tail[1..end];
                if is_slot_name(name) {
                    let value = slots
                        .get(name)
                        .ok_or_else(|| PromptError::MissingSlot(name.to_string()))?;
                    out.push_str(value);
                    rest = &tail[end + 1..];
                    continue;
                }
            }
        }
        out.push_str(&tail[..1]);
        rest = &tail[1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn is_slot_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Slot names a template expects.
pub fn slot_names(template: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        let tail = &rest[pos..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            rest = &tail[2..];
            continue;
        }
        if let (true, Some(end)) = (tail.starts_with('{'), tail.find('}')) {
            let name = &tail[1..end];
            if is_slot_name(name) {
                if !names.iter().any(|n| n == name) {
                    names.push(name.to_string());
                }
                rest = &tail[end + 1..];
                continue;
            }
        }
        rest = &tail[1..];
    }
    names
}
