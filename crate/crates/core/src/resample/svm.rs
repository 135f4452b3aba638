//! Linear margin classifier trained by stochastic subgradient descent on the
//! regularised hinge loss. SVM-SMOTE uses it to find minority points that sit
//! inside the margin band.

use rand::seq::SliceRandom;
use rand::Rng;

use super::knn::Points;

pub const DEFAULT_LAMBDA: f64 = 1e-2;
pub const DEFAULT_EPOCHS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMargin {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearMargin {
    /// `positive[i]` marks row `i` as the +1 class. Step size is `1/(lambda t)`.
    pub fn fit<R: Rng>(points: Points<'_>, positive: &[bool], lambda: f64, epochs: usize, rng: &mut R) -> LinearMargin {
        let mut weights = vec![0.0; points.dim()];
        let mut bias = 0.0;
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut t = 0usize;
        for _ in 0..epochs {
            order.shuffle(rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let y = if positive[i] { 1.0 } else { -1.0 };
                let x = points.row(i);
                let margin = y * (dot(&weights, x) + bias);
                let shrink = 1.0 - eta * lambda;
                for w in &mut weights {
                    *w *= shrink;
                }
                if margin < 1.0 {
                    for (w, xi) in weights.iter_mut().zip(x) {
                        *w += eta * y * xi;
                    }
                    bias += eta * y;
                }
            }
        }
        LinearMargin { weights, bias }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
