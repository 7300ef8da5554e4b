//! Benchmark files, metrics and the live and stateless run protocols.

pub mod dataset;
pub mod metrics;
pub mod protocols;
pub mod report;

pub use dataset::{dataset_stats, load_benchmark, load_canonical, save_dataset, DatasetStats, FormatError};
pub use metrics::{
    evaluate, exact_match_accuracy, interrun_agreement, labelwise_metrics, multiset_counts, multiset_f1, Counts,
    EvalReport, LabelRow, LengthMismatch, Prf,
};
pub use protocols::{
    gold_labels, predicted_labels, replay_stateless, replay_stateless_all, run_live, run_live_all, LiveSession,
    ProtocolError,
};
