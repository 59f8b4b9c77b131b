//! Accuracy metrics, the old/new error decomposition, confusion matrices,
//! weight-norm figures and run summaries.

mod metrics;
mod plot;
mod summary;

pub use metrics::{
    argmax, confusion_matrix, error_decomposition, metrics_csv, topk_accuracy, ErrorDecomposition,
    StepMetrics, METRICS_CSV_HEADER,
};
pub use plot::{confusion_plot, norm_plot, render_figures};
pub use summary::{mean_std, summarize, Summary};
