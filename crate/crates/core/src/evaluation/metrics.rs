//! Multiset-aware classification metrics.
//!
//! Every turn carries a bag of intent tuples. Counts are global: for each
//! turn and tuple, `min(gold, predicted)` occurrences are true positives,
//! the predicted surplus is false positives and the gold surplus false
//! negatives. A duplicated gold tuple predicted once is one TP and one FN.
//!
//! When a ratio is 0/0 it is 1.0 if nothing was expected and nothing was
//! predicted anywhere, and 0.0 otherwise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{IntentMultiset, IntentTuple};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("turn count mismatch: {left} vs {right}")]
pub struct LengthMismatch {
    pub left: usize,
    pub right: usize,
}

fn aligned(a: &[IntentMultiset], b: &[IntentMultiset]) -> Result<(), LengthMismatch> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(LengthMismatch {
            left: a.len(),
            right: b.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    fn add_turn(&mut self, gold: u32, pred: u32) {
        let hit = gold.min(pred);
        self.tp += u64::from(hit);
        self.fp += u64::from(pred - hit);
        self.fn_ += u64::from(gold - hit);
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, self.is_vacuous())
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, self.is_vacuous())
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_, self.is_vacuous())
    }

    pub fn prf(&self) -> Prf {
        Prf {
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }

    fn is_vacuous(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }
}

fn ratio(num: u64, den: u64, vacuous: bool) -> f64 {
    match (den, vacuous) {
        (0, true) => 1.0,
        (0, false) => 0.0,
        _ => num as f64 / den as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn multiset_counts(gold: &[IntentMultiset], pred: &[IntentMultiset]) -> Result<Counts, LengthMismatch> {
    aligned(gold, pred)?;
    let mut counts = Counts::default();
    for (g, p) in gold.iter().zip(pred) {
        for tuple in g.distinct().chain(p.distinct().filter(|t| g.count(t) == 0)) {
            counts.add_turn(g.count(tuple), p.count(tuple));
        }
    }
    Ok(counts)
}

pub fn multiset_f1(gold: &[IntentMultiset], pred: &[IntentMultiset]) -> Result<Prf, LengthMismatch> {
    Ok(multiset_counts(gold, pred)?.prf())
}

/// Fraction of turns whose predicted bag equals the gold bag, counts
/// included. An empty run scores 1.0.
pub fn exact_match_accuracy(gold: &[IntentMultiset], pred: &[IntentMultiset]) -> Result<f64, LengthMismatch> {
    aligned(gold, pred)?;
    if gold.is_empty() {
        return Ok(1.0);
    }
    let hits = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub label: IntentTuple,
    #[serde(flatten)]
    pub counts: Counts,
    /// Gold occurrences of the label; always `tp + fn`.
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-label P/R/F1/support. Labels that never occur on either side are
/// left out. Rows are in tuple order.
pub fn labelwise_metrics(gold: &[IntentMultiset], pred: &[IntentMultiset]) -> Result<Vec<LabelRow>, LengthMismatch> {
    aligned(gold, pred)?;
    let mut per_label: BTreeMap<IntentTuple, Counts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        for tuple in g.distinct().chain(p.distinct()) {
            per_label.entry(*tuple).or_default();
        }
        for (tuple, counts) in per_label.iter_mut() {
            let (gc, pc) = (g.count(tuple), p.count(tuple));
            if gc + pc > 0 {
                counts.add_turn(gc, pc);
            }
        }
    }
    Ok(per_label
        .into_iter()
        .map(|(label, counts)| LabelRow {
            label,
            counts,
            support: counts.tp + counts.fn_,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
        })
        .collect())
}

/// Multiset F1 between two prediction runs: `2·Σmin / Σ(p1 + p2)`.
/// Symmetric; two empty runs agree fully.
pub fn interrun_agreement(run1: &[IntentMultiset], run2: &[IntentMultiset]) -> Result<f64, LengthMismatch> {
    aligned(run1, run2)?;
    let (mut overlap, mut total) = (0u64, 0u64);
    for (a, b) in run1.iter().zip(run2) {
        overlap += a.intersection(b).len() as u64;
        total += (a.len() + b.len()) as u64;
    }
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * overlap as f64 / total as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub exact_match_accuracy: f64,
    pub multiset_precision: f64,
    pub multiset_recall: f64,
    pub multiset_f1: f64,
    pub counts: Counts,
    pub per_label: Vec<LabelRow>,
    pub n_turns: usize,
    /// Gold tuples, duplicates included.
    pub n_tuples: usize,
}

pub fn evaluate(gold: &[IntentMultiset], pred: &[IntentMultiset]) -> Result<EvalReport, LengthMismatch> {
    let counts = multiset_counts(gold, pred)?;
    Ok(EvalReport {
        exact_match_accuracy: exact_match_accuracy(gold, pred)?,
        multiset_precision: counts.precision(),
        multiset_recall: counts.recall(),
        multiset_f1: counts.f1(),
        counts,
        per_label: labelwise_metrics(gold, pred)?,
        n_turns: gold.len(),
        n_tuples: gold.iter().map(IntentMultiset::len).sum(),
    })
}
