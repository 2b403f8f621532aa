//! Segmentation and detection metrics, fold management, paired tests and reports.

mod folds;
mod metrics;
mod overlay;
mod report;
mod stats;

pub use folds::{make_folds, FoldSplit};
pub use metrics::{auc_roc, detection_metrics, dice, iou, overlap, Confusion, DetectionMetrics, Overlap};
pub use overlay::{overlay_image, write_overlay};
pub use report::{
    detection_table_csv, evaluate_method, render_summary, segmentation_table_csv, write_reports,
    DetectionSummary, FoldMetrics, FoldReport, SliceOutcome,
};
pub use stats::{paired_ttest, MeanStd, TTest};
