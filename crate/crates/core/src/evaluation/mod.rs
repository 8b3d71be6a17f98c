//! Scoring, significance testing, the ablation matrix and attention
//! heatmaps.

mod ablation;
mod heatmap;
mod metrics;
mod significance;

pub use ablation::{
    ablation_rows, ablation_table, run_ablation, AblationGrid, AblationRow, AblationSpec, TEXT_CAPS,
};
pub use heatmap::{
    attention_grid, export_heatmap, format_grid, head_average, parse_grid, render_overlay, HeatmapFiles,
    OVERLAY_ALPHA,
};
pub use metrics::{f1_report, EvalReport, ReportRecord, Significance};
pub use significance::{significance, DEFAULT_TRIALS, MIN_TRIALS};

