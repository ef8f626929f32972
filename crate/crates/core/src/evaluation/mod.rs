//! Metrics, evaluation setups, reports and attention dumps.

pub mod attention;
pub mod metrics;
pub mod report;
pub mod setups;


pub use attention::{dump_attention, page_attention, AttentionMap};
pub use metrics::{anls, exact_accuracy, exact_match, levenshtein, normalize_answer, normalized_levenshtein, normalized_similarity, page_accuracy, sample_anls};
pub use report::{
    breakdown_by_answer_page, breakdown_csv, breakdown_svg, build_report, confusion_answer_vs_page, confusion_csv, report_json,
    write_report_files, BreakdownRow, Confusion, MetricReport, BREAKDOWN_HEADER, REPORT_FILES,
};
pub use setups::{evaluate, merge_pages, predict, Evaluation, Prediction, SampleResult, SetupKind, ANLS_THRESHOLD};
