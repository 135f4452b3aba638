//! Confusion matrices, macro metrics, cross validation and grid sweeps.

pub mod confusion;
pub mod cv;
pub mod metrics;
pub mod sweep;

pub use confusion::{confusion, ConfusionMatrix};
pub use cv::{
    cross_validate, fold_seed, fold_split, run_folds, Classifier, CvReport, FoldPrep, FoldResult, FoldSplit,
    MeanMetrics,
};
pub use metrics::{harmonic_mean, macro_scores, metrics, pct, round_half_up, MetricsReport};
pub use sweep::{
    grid_sweep, published_row, rank_results, sweep_cells, SweepGrid, SweepPoint, SweepRow, VANILLA_TUNING_PUBLISHED,
};

/// Renders rows of cells as a column-aligned text table: the first column
/// left-aligned, the rest right-aligned.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                line.push_str(&format!("{cell:<w$}", w = widths[c]));
            } else {
                line.push_str(&format!("  {cell:>w$}", w = widths[c]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Tab-separated rendering of the same cells.
pub fn tsv(rows: &[Vec<String>]) -> String {
    rows.iter().map(|r| r.join("\t") + "\n").collect()
}
