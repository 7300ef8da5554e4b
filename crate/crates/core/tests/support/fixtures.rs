use std::path::PathBuf;

use ambient_core::{ProjectState, Task, TeamMember, WireMessage};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn team() -> Vec<TeamMember> {
    serde_json::from_str(&std::fs::read_to_string(data_dir().join("roster.json")).unwrap()).unwrap()
}

pub fn backlog() -> Vec<Task> {
    serde_json::from_str(&std::fs::read_to_string(data_dir().join("backlog.json")).unwrap()).unwrap()
}

pub fn state() -> ProjectState {
    ProjectState::new(team(), backlog()).unwrap()
}

pub fn wire(turn: usize, user: &str, text: &str) -> WireMessage {
    WireMessage::new(
        user,
        text,
        format!("12-03-2025 {:02}:{:02}:00", 9 + turn / 60, turn % 60),
    )
}
