//! Human-readable report tables.

use std::fmt::Write;

use super::dataset::DatasetStats;
use super::metrics::EvalReport;

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(rule.iter().map(String::as_str).collect(), &mut out);
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// Summary table followed by the label-wise table, highest support first.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    let summary = vec![
        vec![
            "Exact-match accuracy".to_string(),
            format!("{:.3}", report.exact_match_accuracy),
        ],
        vec![
            "Multiset precision".to_string(),
            format!("{:.3}", report.multiset_precision),
        ],
        vec!["Multiset recall".to_string(), format!("{:.3}", report.multiset_recall)],
        vec!["Multiset F1".to_string(), format!("{:.3}", report.multiset_f1)],
        vec![
            "TP / FP / FN".to_string(),
            format!("{} / {} / {}", report.counts.tp, report.counts.fp, report.counts.fn_),
        ],
        vec!["Turns".to_string(), report.n_turns.to_string()],
        vec!["Gold tuples".to_string(), report.n_tuples.to_string()],
    ];
    out.push_str(&table(&["Metric", "Value"], &summary));
    out.push('\n');
    let mut rows = report.per_label.clone();
    rows.sort_by(|a, b| b.support.cmp(&a.support).then(a.label.cmp(&b.label)));
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.to_string(),
                format!("{:.3}", r.precision),
                format!("{:.3}", r.recall),
                format!("{:.3}", r.f1),
                r.support.to_string(),
            ]
        })
        .collect();
    out.push_str(&table(&["Label", "Precision", "Recall", "F1", "Support"], &rows));
    out
}

pub fn render_stats(stats: &DatasetStats) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} dialogues, {} turns, {} gold tuples ({} unlabeled turns)",
        stats.dialogues, stats.turns, stats.tuples, stats.unlabeled_turns
    );
    let mut rows: Vec<_> = stats.supports.iter().collect();
    rows.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    let rows: Vec<Vec<String>> = rows.iter().map(|(l, n)| vec![l.to_string(), n.to_string()]).collect();
    out.push_str(&table(&["Label", "Support"], &rows));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::metrics::evaluate;
    use crate::model::{ActionType, IntentMultiset, IntentTuple, MessageCategory};

    #[test]
    fn report_has_expected_columns() {
        let bag = IntentMultiset::single(IntentTuple::new(MessageCategory::NewTask, ActionType::CreateTask));
        let text = render_report(&evaluate(std::slice::from_ref(&bag), std::slice::from_ref(&bag)).unwrap());
        for col in [
            "Exact-match accuracy",
            "Multiset F1",
            "Precision",
            "Recall",
            "Support",
            "(NEW_TASK, CREATE_TASK)",
        ] {
            assert!(text.contains(col), "{col}");
        }
        assert!(text.contains("1.000"));
    }
}
