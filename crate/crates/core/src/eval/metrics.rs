use serde::{Deserialize, Serialize};

use super::confusion::ConfusionMatrix;
use crate::error::{Error, Result};

/// Accuracy and macro-averaged precision, recall and F, all as fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Harmonic mean of `macro_precision` and `macro_recall`.
    pub macro_f: f64,
    pub confusion: ConfusionMatrix,
    /// Zero-denominator cases that were scored as 0.
    pub notes: Vec<String>,
}

/// `2pr / (p + r)`, or 0 when both are 0.
pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Macro precision, recall and F from per-class values on any common scale.
pub fn macro_scores(precision: &[f64], recall: &[f64]) -> (f64, f64, f64) {
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let (p, r) = (mean(precision), mean(recall));
    (p, r, harmonic_mean(p, r))
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::config("confusion matrix is empty"));
    }
    let c = cm.classes();
    let mut notes = Vec::new();
    let mut ratio = |num: u64, den: u64, what: &str, class: usize| {
        if den == 0 {
            notes.push(format!("{what} of class {class} undefined (no instances), scored 0"));
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision: Vec<f64> = (0..c)
        .map(|k| ratio(cm.get(k, k), cm.row_sum(k), "precision", k))
        .collect();
    let recall: Vec<f64> = (0..c)
        .map(|k| ratio(cm.get(k, k), cm.column_sum(k), "recall", k))
        .collect();
    let (macro_precision, macro_recall, macro_f) = macro_scores(&precision, &recall);
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        precision,
        recall,
        macro_precision,
        macro_recall,
        macro_f,
        confusion: cm.clone(),
        notes,
    })
}

/// Rounds half away from zero at `decimals` places, absorbing binary
/// representation error just below the half.
pub fn round_half_up(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let scaled = value * scale;
    let nudged = scaled + scaled.signum() * 1e-9 * scaled.abs().max(1.0);
    nudged.round() / scale
}

/// Fraction as a percentage with two decimals, e.g. `0.64935` → `"64.94"`.
pub fn pct(fraction: f64) -> String {
    format!("{:.2}", round_half_up(fraction * 100.0, 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::confusion::confusion;
    use proptest::prelude::*;

    #[test]
    fn identity_matrix_scores_perfectly() {
        let cm = ConfusionMatrix::from_counts(vec![vec![4, 0, 0], vec![0, 2, 0], vec![0, 0, 7]]).unwrap();
        let m = metrics(&cm).unwrap();
        for v in [m.accuracy, m.macro_precision, m.macro_recall, m.macro_f] {
            assert_eq!(v, 1.0);
        }
        assert!(m.notes.is_empty());
    }

    #[test]
    fn hand_computed_three_class() {
        // pred\actual: rows predicted.
        let cm = ConfusionMatrix::from_counts(vec![vec![5, 1, 0], vec![2, 3, 1], vec![0, 0, 4]]).unwrap();
        let m = metrics(&cm).unwrap();
        assert!((m.accuracy - 12.0 / 16.0).abs() < 1e-15);
        assert!((m.precision[0] - 5.0 / 6.0).abs() < 1e-15);
        assert!((m.recall[0] - 5.0 / 7.0).abs() < 1e-15);
        assert!((m.recall[2] - 4.0 / 5.0).abs() < 1e-15);
        let p = (5.0 / 6.0 + 3.0 / 6.0 + 1.0) / 3.0;
        let r = (5.0 / 7.0 + 3.0 / 4.0 + 4.0 / 5.0) / 3.0;
        assert!((m.macro_f - 2.0 * p * r / (p + r)).abs() < 1e-15);
    }

    #[test]
    fn zero_denominators_are_noted() {
        let cm = confusion(&[0, 0], &[0, 1], 3).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!(m.precision[1], 0.0);
        assert_eq!(m.recall[2], 0.0);
        assert_eq!(m.notes.len(), 3);
        assert!(metrics(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn constant_predictor_on_balanced_data() {
        let truth: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let m = metrics(&confusion(&vec![1; 300], &truth, 3).unwrap()).unwrap();
        assert_eq!(pct(m.accuracy), "33.33");
        assert_eq!(pct(m.macro_recall), "33.33");
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(pct(0.62775), "62.78");
        assert_eq!(pct(0.649350), "64.94");
        assert_eq!(pct(0.6493), "64.93");
        assert_eq!(round_half_up(2.675, 2), 2.68);
        assert_eq!(round_half_up(-1.005, 2), -1.01);
    }

    proptest! {
        #[test]
        fn trace_over_total_is_accuracy(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..200)) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let cm = confusion(&p, &t, 3).unwrap();
            let m = metrics(&cm).unwrap();
            let hits = p.iter().zip(&t).filter(|(a, b)| a == b).count();
            prop_assert_eq!(m.accuracy, hits as f64 / p.len() as f64);
            for v in m.precision.iter().chain(&m.recall).chain([&m.macro_f]) {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }

        #[test]
        fn macro_recall_ignores_instance_order(
            pairs in prop::collection::vec((0usize..3, 0usize..3), 1..100),
            rot in 0usize..100,
        ) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let mut shuffled = pairs.clone();
            let len = shuffled.len();
            shuffled.rotate_left(rot % len);
            shuffled.reverse();
            let (ps, ts): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
            let a = metrics(&confusion(&p, &t, 3).unwrap()).unwrap();
            let b = metrics(&confusion(&ps, &ts, 3).unwrap()).unwrap();
            prop_assert_eq!(a.macro_recall, b.macro_recall);
        }
    }
}
