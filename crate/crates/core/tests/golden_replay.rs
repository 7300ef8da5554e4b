use std::time::Instant;

use ambient_core::classifier::rule_classify;
use ambient_core::evaluation::{
    evaluate, gold_labels, interrun_agreement, load_benchmark, predicted_labels, replay_stateless, run_live,
};
use ambient_core::{ingest_message, Dialogue, EngineConfig, RuleSet};

mod support;
use support::fixtures::{data_dir, state, wire};
use support::fsm::VOCAB;

fn golden() -> Dialogue {
    let mut d = load_benchmark(&data_dir().join("golden/golden_dialogue.jsonl")).unwrap();
    assert_eq!(d.len(), 1);
    d.remove(0)
}

#[test]
fn golden_shape() {
    let g = golden();
    assert_eq!(g.turns.len(), 20);
    assert!(g
        .turns
        .iter()
        .all(|t| t.ground_truth.as_ref().is_some_and(|b| !b.is_empty())));
    assert!(g.turns.iter().all(|t| t.predicted.is_none() && t.trace.is_none()));
}

#[test]
fn both_protocols_reproduce_golden_labels() {
    let start = Instant::now();
    let config = EngineConfig::default();
    let g = golden();
    let gold = gold_labels(std::slice::from_ref(&g)).unwrap();

    let stateless = replay_stateless(&config, &g);
    let live = run_live(&config, &g).unwrap();
    let ps = predicted_labels(std::slice::from_ref(&stateless)).unwrap();
    let pl = predicted_labels(std::slice::from_ref(&live)).unwrap();
    assert_eq!(evaluate(&gold, &ps).unwrap().exact_match_accuracy, 1.0);
    assert_eq!(evaluate(&gold, &pl).unwrap().exact_match_accuracy, 1.0);
    assert_eq!(interrun_agreement(&ps, &pl).unwrap(), 1.0);

    // the live run says what the recording says
    for (rec, run) in g.turns.iter().zip(&live.turns) {
        assert_eq!(rec.agent_outputs, run.agent_outputs, "turn {}", rec.turn_index);
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn stateless_turns_do_not_see_the_future() {
    let config = EngineConfig::default();
    let g = golden();
    let full = replay_stateless(&config, &g);
    // prefixes in reverse order: turn t must not depend on anything after it
    for t in (0..g.turns.len()).rev() {
        let prefix = Dialogue {
            turns: g.turns[..=t].to_vec(),
            ..g.clone()
        };
        let last = replay_stateless(&config, &prefix).turns.pop().unwrap();
        assert_eq!(last.predicted, full.turns[t].predicted, "turn {t}");
        assert_eq!(last.agent_outputs, full.turns[t].agent_outputs, "turn {t}");
    }
}

#[test]
fn rule_classifier_is_deterministic() {
    let rules = RuleSet::default();
    let mut s = state();
    for (t, text) in VOCAB.iter().enumerate() {
        let m = ingest_message(&mut s, &wire(t, "mchen", text), "general").unwrap();
        let a = rule_classify(&s, &m, &rules);
        let b = rule_classify(&s.clone(), &m, &rules);
        assert_eq!(a, b, "{text}");
        assert!(!a.is_empty() && a.iter().all(|c| c.confidence == 1.0), "{text}");
    }
}
