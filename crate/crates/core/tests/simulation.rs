use ambient_core::evaluation::{load_canonical, save_dataset};
use ambient_core::simulator::{generate_turn, run_simulation, AuditEntry, ScriptedSga, SimulationConfig};
use ambient_core::{BackendHandle, EngineConfig, ScriptedBackend, AGENT_HANDLE};

mod support;
use support::fixtures::{backlog, team};

fn config() -> SimulationConfig {
    SimulationConfig {
        team: team(),
        backlog: backlog(),
        ..SimulationConfig::default()
    }
}

fn scripted(seed: u64) -> impl Fn(usize) -> BackendHandle + Sync {
    move |i| BackendHandle::from_backend(ScriptedSga::new(&team(), &backlog(), seed + i as u64))
}

fn audit_for<'a>(audit: &'a [AuditEntry], dialogue: &str, turn: usize) -> &'a AuditEntry {
    audit
        .iter()
        .find(|a| a.dialogue == dialogue && a.turn == turn && a.attempt == 0)
        .unwrap()
}

#[test]
fn default_config_gives_eight_by_twenty() {
    let out = run_simulation(&config(), &EngineConfig::default(), &scripted(7)).unwrap();
    assert!(out.aborted.is_empty());
    assert_eq!(out.dialogues.len(), 8);
    assert_eq!(out.dialogues.iter().map(|d| d.turns.len()).sum::<usize>(), 160);

    let roster: Vec<String> = team().into_iter().map(|m| m.handle).collect();
    for d in &out.dialogues {
        for t in &d.turns {
            assert!(roster.contains(&t.message.user), "{} not on roster", t.message.user);
            assert!(t.ground_truth.is_none());
            assert!(t.trace.is_some());
        }
    }

    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &out.dialogues).unwrap();
    let back = load_canonical(dir.path()).unwrap();
    assert_eq!(back, out.dialogues);
}

#[test]
fn next_prompt_carries_agent_replies() {
    let out = run_simulation(&config(), &EngineConfig::default(), &scripted(3)).unwrap();
    let mut carried = 0;
    for d in &out.dialogues {
        for (t, turn) in d.turns.iter().enumerate().take(d.turns.len() - 1) {
            let next = audit_for(&out.audit, &d.id, t + 1);
            assert!(next.context.contains(&turn.message.message));
            for reply in &turn.agent_outputs {
                assert!(
                    next.context.contains(reply.as_str()),
                    "{} turn {t}: reply missing",
                    d.id
                );
                carried += 1;
            }
        }
    }
    assert!(carried > 20, "only {carried} agent replies to check");
}

#[test]
fn single_turn_dialogue() {
    let cfg = SimulationConfig {
        turns_per_dialogue: 1,
        n_dialogues: 1,
        ..config()
    };
    let out = run_simulation(&cfg, &EngineConfig::default(), &scripted(1)).unwrap();
    assert_eq!(out.dialogues[0].turns.len(), 1);
    assert!(out.dialogues[0].turns[0].trace.is_some());
}

#[test]
fn fixture_replay_passes_through() {
    let raw = r#"{"user": "pkumar", "message": "OAuth is almost there", "time": "12-03-2025 10:15:00"}"#;
    let backend = BackendHandle::from_backend(ScriptedBackend::new([raw]));
    let m = generate_turn(&backend, "prompt", "context", &team(), |_, _, _| {}).unwrap();
    assert_eq!(
        (m.user.as_str(), m.message.as_str(), m.time.as_str()),
        ("pkumar", "OAuth is almost there", "12-03-2025 10:15:00")
    );
}

#[test]
fn broken_generator_aborts_only_its_dialogue() {
    let factory = |i: usize| {
        if i == 0 {
            BackendHandle::from_backend(ScriptedBackend::new(["no json here"; 10]))
        } else {
            BackendHandle::from_backend(ScriptedSga::new(&team(), &backlog(), i as u64))
        }
    };
    let cfg = SimulationConfig {
        n_dialogues: 3,
        turns_per_dialogue: 4,
        ..config()
    };
    let out = run_simulation(&cfg, &EngineConfig::default(), &factory).unwrap();
    assert_eq!(out.dialogues.len(), 2);
    assert_eq!(out.aborted.len(), 1);
    assert_eq!(out.aborted[0].turns_completed, 0);
    // three failed turns, each tried twice
    assert_eq!(out.audit.iter().filter(|a| a.dialogue == out.aborted[0].id).count(), 6);
}

#[test]
fn generator_never_speaks_as_agent() {
    let out = run_simulation(&config(), &EngineConfig::default(), &scripted(9)).unwrap();
    assert!(out
        .dialogues
        .iter()
        .flat_map(|d| &d.turns)
        .all(|t| !t.message.user.eq_ignore_ascii_case(AGENT_HANDLE)));
}
