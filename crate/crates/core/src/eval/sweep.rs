use serde::{Deserialize, Serialize};

use super::cv::{CvReport, MeanMetrics};
use super::metrics::pct;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub epochs: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl SweepGrid {
    /// Epochs {10, 50} × learning rate {1e-5, 1e-4, 1e-3, 1e-2} × batch {16, 32, 64}.
    pub fn vanilla_tuning() -> Self {
        SweepGrid {
            epochs: vec![10, 50],
            learning_rates: vec![1e-5, 1e-4, 1e-3, 1e-2],
            batch_sizes: vec![16, 32, 64],
        }
    }

    /// Combinations with epochs outermost, then batch size, then learning rate.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &epochs in &self.epochs {
            for &batch_size in &self.batch_sizes {
                for &learning_rate in &self.learning_rates {
                    out.push(SweepPoint {
                        epochs,
                        learning_rate,
                        batch_size,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

/// One published result: epochs, learning rate, batch, then accuracy, recall,
/// precision and F1 in percent.
pub type PublishedRow = (usize, f64, usize, f64, f64, f64, f64);

/// Published vanilla-network tuning results. The (50, 0.01, 16) combination
/// has no published row.
pub const VANILLA_TUNING_PUBLISHED: [PublishedRow; 23] = [
    (10, 1e-5, 16, 60.71, 65.00, 60.71, 62.77),
    (10, 1e-4, 16, 61.48, 67.50, 61.48, 64.35),
    (10, 1e-3, 16, 53.75, 56.31, 53.75, 55.00),
    (10, 1e-2, 16, 33.33, 33.33, 33.33, 33.33),
    (10, 1e-5, 32, 60.14, 63.08, 60.14, 61.57),
    (10, 1e-4, 32, 61.68, 62.98, 60.57, 61.75),
    (10, 1e-3, 32, 59.52, 64.97, 59.64, 62.19),
    (10, 1e-2, 32, 33.33, 33.33, 33.33, 33.33),
    (10, 1e-5, 64, 59.49, 62.37, 59.49, 60.90),
    (10, 1e-4, 64, 60.57, 62.98, 60.57, 61.75),
    (10, 1e-3, 64, 59.64, 64.97, 59.64, 62.19),
    (10, 1e-2, 64, 33.33, 33.34, 33.33, 33.33),
    (50, 1e-5, 16, 62.69, 66.54, 62.69, 64.56),
    (50, 1e-4, 16, 61.02, 64.04, 61.02, 62.49),
    (50, 1e-3, 16, 49.61, 50.86, 49.60, 50.22),
    (50, 1e-5, 32, 62.62, 67.06, 62.62, 64.77),
    (50, 1e-4, 32, 62.77, 67.07, 62.77, 64.85),
    (50, 1e-3, 32, 61.54, 66.65, 61.54, 63.99),
    (50, 1e-2, 32, 33.33, 33.33, 33.33, 33.33),
    (50, 1e-5, 64, 62.26, 66.66, 62.26, 64.39),
    (50, 1e-4, 64, 62.82, 67.69, 62.81, 65.16),
    (50, 1e-3, 64, 62.02, 67.21, 62.02, 64.51),
    (50, 1e-2, 64, 33.32, 33.32, 33.32, 33.32),
];

pub fn published_row(point: &SweepPoint) -> Option<PublishedRow> {
    VANILLA_TUNING_PUBLISHED
        .iter()
        .copied()
        .find(|r| r.0 == point.epochs && r.1 == point.learning_rate && r.2 == point.batch_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub mean: MeanMetrics,
    pub pooled_accuracy: f64,
    pub best: bool,
    /// Published accuracy for this combination, if any.
    pub published_accuracy: Option<f64>,
}

/// Sorts by mean accuracy, highest first (ties keep grid order), and flags
/// the top row.
pub fn rank_results(mut rows: Vec<SweepRow>) -> Vec<SweepRow> {
    rows.sort_by(|a, b| b.mean.accuracy.total_cmp(&a.mean.accuracy));
    for (i, r) in rows.iter_mut().enumerate() {
        r.best = i == 0;
    }
    rows
}

/// Runs `evaluate` once per grid combination and ranks the results.
pub fn grid_sweep<E>(grid: &SweepGrid, mut evaluate: E) -> Result<Vec<SweepRow>>
where
    E: FnMut(&SweepPoint) -> Result<CvReport>,
{
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    let mut rows = Vec::with_capacity(points.len());
    for point in points {
        let report = evaluate(&point)?;
        rows.push(SweepRow {
            point,
            mean: report.mean.clone(),
            pooled_accuracy: report.pooled.accuracy,
            best: false,
            published_accuracy: published_row(&point).map(|r| r.3),
        });
    }
    Ok(rank_results(rows))
}

pub const SWEEP_HEADER: [&str; 10] = [
    "epochs",
    "learning_rate",
    "batch_size",
    "accuracy",
    "recall",
    "precision",
    "f1",
    "pooled_accuracy",
    "published_accuracy",
    "best",
];

pub fn sweep_cells(rows: &[SweepRow]) -> Vec<Vec<String>> {
    let mut out = vec![SWEEP_HEADER.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        out.push(vec![
            r.point.epochs.to_string(),
            format!("{:e}", r.point.learning_rate),
            r.point.batch_size.to_string(),
            pct(r.mean.accuracy),
            pct(r.mean.macro_recall),
            pct(r.mean.macro_precision),
            pct(r.mean.macro_f),
            pct(r.pooled_accuracy),
            r.published_accuracy
                .map_or_else(|| "unpublished".to_string(), |a| format!("{a:.2}")),
            if r.best { "*".into() } else { String::new() },
        ]);
    }
    out
}
