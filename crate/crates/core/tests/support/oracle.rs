//! Brute-force multiset metrics over plain lists.

use ambient_core::evaluation::{labelwise_metrics, multiset_counts, multiset_f1, Counts};
use ambient_core::{ActionType as A, IntentMultiset, IntentTuple, MessageCategory as C};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LABELS: [IntentTuple; 6] = [
    IntentTuple::new(C::WorkflowResponse, A::ContinueWorkflow),
    IntentTuple::new(C::NewTask, A::CreateTask),
    IntentTuple::new(C::SummaryTrigger, A::GenerateSummary),
    IntentTuple::new(C::RegularConversation, A::NoAction),
    IntentTuple::new(C::ExistingTask, A::UpdateContext),
    IntentTuple::new(C::ExistingTask, A::NoAction),
];

/// Per turn: gold and predicted label indices into [`LABELS`].
pub type Turns = Vec<(Vec<usize>, Vec<usize>)>;

pub fn bag(ix: &[usize]) -> IntentMultiset {
    ix.iter().map(|&i| LABELS[i]).collect()
}

pub fn split(turns: &Turns) -> (Vec<IntentMultiset>, Vec<IntentMultiset>) {
    turns.iter().map(|(g, p)| (bag(g), bag(p))).unzip()
}

/// Intersection by deletion over sorted lists, optionally restricted to
/// one label.
pub fn oracle_counts(turns: &Turns, only: Option<usize>) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let keep = |v: &Vec<usize>| -> Vec<usize> {
        let mut v: Vec<usize> = v.iter().copied().filter(|x| only.is_none_or(|o| o == *x)).collect();
        v.sort();
        v
    };
    for (g, p) in turns {
        let mut gold = keep(g);
        let pred = keep(p);
        let gold_len = gold.len() as u64;
        let mut hit = 0;
        for x in &pred {
            if let Some(pos) = gold.iter().position(|y| y == x) {
                gold.remove(pos);
                hit += 1;
            }
        }
        tp += hit;
        fp += pred.len() as u64 - hit;
        fn_ += gold_len - hit;
    }
    (tp, fp, fn_)
}

pub fn oracle_f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Compares the library against the oracle on one turn set.
pub fn check(turns: &Turns) -> Result<(), String> {
    let (gold, pred) = split(turns);
    let (tp, fp, fn_) = oracle_counts(turns, None);
    let got = multiset_counts(&gold, &pred).map_err(|e| e.to_string())?;
    if got != (Counts { tp, fp, fn_ }) {
        return Err(format!("counts {got:?} vs oracle ({tp}, {fp}, {fn_}) on {turns:?}"));
    }
    let f1 = multiset_f1(&gold, &pred).map_err(|e| e.to_string())?.f1;
    if (f1 - oracle_f1(tp, fp, fn_)).abs() > 1e-12 {
        return Err(format!("f1 {f1} vs oracle {}", oracle_f1(tp, fp, fn_)));
    }
    let rows = labelwise_metrics(&gold, &pred).map_err(|e| e.to_string())?;
    for (i, label) in LABELS.iter().enumerate() {
        let (tp, fp, fn_) = oracle_counts(turns, Some(i));
        match rows.iter().find(|r| r.label == *label) {
            Some(row) => {
                if row.counts != (Counts { tp, fp, fn_ }) || row.support != tp + fn_ {
                    return Err(format!("label {label}: {:?} vs ({tp}, {fp}, {fn_})", row.counts));
                }
                if (row.f1 - oracle_f1(tp, fp, fn_)).abs() > 1e-12 {
                    return Err(format!("label {label}: f1 {} vs {}", row.f1, oracle_f1(tp, fp, fn_)));
                }
            }
            None if (tp, fp, fn_) != (0, 0, 0) => return Err(format!("label {label} missing from rows")),
            None => {}
        }
    }
    Ok(())
}

/// 1 to 30 turns, up to 4 tuples per side per turn.
pub fn random_turns(rng: &mut ChaCha8Rng) -> Turns {
    let n = rng.random_range(1..=30);
    let side = |rng: &mut ChaCha8Rng| (0..rng.random_range(0..=4)).map(|_| rng.random_range(0..6)).collect();
    (0..n).map(|_| (side(rng), side(rng))).collect()
}

pub fn seeded_sweep(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases).try_for_each(|_| check(&random_turns(&mut rng)))
}
