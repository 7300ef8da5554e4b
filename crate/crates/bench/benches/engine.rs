use std::hint::black_box;

use ambient_bench::{backlog, golden, label_sets, team};
use ambient_core::evaluation::{evaluate, replay_stateless, run_live};
use ambient_core::{Engine, EngineConfig, ProjectState, WireMessage};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn metrics(c: &mut Criterion) {
    let (gold, pred) = label_sets(160);
    c.bench_function("evaluate_160_turns", |b| {
        b.iter(|| evaluate(black_box(&gold), black_box(&pred)).unwrap())
    });
}

fn engine_turn(c: &mut Criterion) {
    let engine = Engine::in_memory(EngineConfig::default(), backlog());
    let state = ProjectState::new(team(), backlog()).unwrap();
    let mut group = c.benchmark_group("engine_turn");
    for (name, text) in [
        ("chatter", "anyone ordering lunch?"),
        ("task_proposal", "new bug: avatar crop breaks on Safari"),
        ("summary_trigger", "@devnous can you generate today's team summary?"),
    ] {
        let msg = WireMessage::new("pkumar", text, "12-03-2025 10:00:00");
        group.bench_function(name, |b| {
            b.iter_batched(
                || state.clone(),
                |mut s| engine.process(&mut s, black_box(&msg)).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn golden_replay(c: &mut Criterion) {
    let config = EngineConfig::default();
    let g = golden();
    c.bench_function("golden_stateless", |b| {
        b.iter(|| replay_stateless(&config, black_box(&g)))
    });
    c.bench_function("golden_live", |b| b.iter(|| run_live(&config, black_box(&g)).unwrap()));
}

criterion_group!(benches, metrics, engine_turn, golden_replay);
criterion_main!(benches);
