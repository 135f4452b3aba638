use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square count matrix with rows = predicted class, columns = actual class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    /// `counts[pred][actual]`; must be square.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if counts.iter().any(|row| row.len() != c) {
            return Err(Error::shape("confusion counts must be square"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, pred: usize, actual: usize) -> u64 {
        self.counts[pred][actual]
    }

    pub fn add(&mut self, pred: usize, actual: usize, n: u64) {
        self.counts[pred][actual] += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|c| self.counts[c][c]).sum()
    }

    /// Instances predicted as `class`.
    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Instances whose true label is `class`.
    pub fn column_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn transpose(&self) -> Self {
        let c = self.classes();
        ConfusionMatrix {
            counts: (0..c).map(|i| (0..c).map(|j| self.counts[j][i]).collect()).collect(),
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::shape("cannot merge confusion matrices of different sizes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Tab-separated, first cell `predicted/actual`.
    pub fn to_tsv(&self, labels: &[&str]) -> String {
        let mut out = String::from("predicted/actual");
        for c in 0..self.classes() {
            out.push('\t');
            out.push_str(label(labels, c));
        }
        out.push('\n');
        for (p, row) in self.counts.iter().enumerate() {
            out.push_str(label(labels, p));
            for v in row {
                out.push_str(&format!("\t{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Right-aligned text table in the same layout as [`to_tsv`](Self::to_tsv).
    pub fn to_text(&self, labels: &[&str]) -> String {
        let header: Vec<String> = std::iter::once("Predicted/actual".to_string())
            .chain((0..self.classes()).map(|c| label(labels, c).to_string()))
            .collect();
        let mut rows = vec![header];
        for (p, row) in self.counts.iter().enumerate() {
            rows.push(
                std::iter::once(label(labels, p).to_string())
                    .chain(row.iter().map(u64::to_string))
                    .collect(),
            );
        }
        crate::eval::align(&rows)
    }
}

fn label<'a>(labels: &'a [&str], c: usize) -> &'a str {
    labels.get(c).copied().unwrap_or("?")
}

/// Counts `(pred, actual)` pairs over `classes` classes.
pub fn confusion(preds: &[usize], truth: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (i, (&p, &a)) in preds.iter().zip(truth).enumerate() {
        if p >= classes || a >= classes {
            return Err(Error::shape(format!(
                "instance {i}: label pair ({p}, {a}) outside {classes} classes"
            )));
        }
        cm.add(p, a, 1);
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let y = [0, 1, 2, 2, 1];
        let cm = confusion(&y, &y, 3).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn swapping_transposes() {
        let p = [0, 1, 2, 0, 2, 1, 1];
        let t = [1, 1, 0, 0, 2, 2, 0];
        assert_eq!(confusion(&t, &p, 3).unwrap(), confusion(&p, &t, 3).unwrap().transpose());
    }

    #[test]
    fn out_of_range_is_error() {
        assert!(confusion(&[3], &[0], 3).is_err());
        assert!(confusion(&[0, 1], &[0], 3).is_err());
    }

    #[test]
    fn layout_is_predicted_by_actual() {
        let cm = confusion(&[2], &[0], 3).unwrap();
        assert_eq!(cm.get(2, 0), 1);
        assert_eq!(cm.row_sum(2), 1);
        assert_eq!(cm.column_sum(0), 1);
        let tsv = cm.to_tsv(&["0", "1", "2"]);
        assert_eq!(tsv.lines().nth(3).unwrap(), "2\t1\t0\t0");
    }
}
