//! Gradient boosting with softmax deviance (three or more classes) or
//! logistic deviance (two classes).

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_regression_presorted, SortedColumns, TreeConfig, TreeNode};
use crate::data::Dataset;
use crate::error::{Error, Result};

const PRIOR_EPS: f64 = 1e-15;

fn default_rounds() -> usize {
    100
}

fn default_learning_rate() -> f64 {
    0.1
}

fn default_depth() -> usize {
    3
}

fn default_min_leaf() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmConfig {
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            rounds: default_rounds(),
            learning_rate: default_learning_rate(),
            max_depth: default_depth(),
            min_leaf: default_min_leaf(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub class_count: usize,
    pub n_features: usize,
    pub learning_rate: f64,
    /// Starting raw score per output: log-priors, or the log-odds of class 1
    /// for two classes.
    pub init: Vec<f64>,
    /// `trees[round][output]`; one output for two classes, else one per class.
    pub trees: Vec<Vec<TreeNode>>,
    /// Mean training deviance before the first round and after each round.
    #[serde(default)]
    pub train_deviance: Vec<f64>,
}

fn outputs(class_count: usize) -> usize {
    if class_count == 2 {
        1
    } else {
        class_count
    }
}

pub fn fit_gbm(data: &Dataset, config: &GbmConfig, class_count: usize) -> Result<GbmModel> {
    if class_count < 2 {
        return Err(Error::config("boosting needs at least two classes"));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::config("learning_rate must be positive"));
    }
    if data.is_empty() {
        return Err(Error::config("training data is empty"));
    }
    let labels = data.labels();
    if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
        return Err(Error::config(format!("label {bad} outside {class_count} classes")));
    }
    let n = data.n_rows();
    let k = outputs(class_count);
    let mut counts = vec![0usize; class_count];
    for &y in labels {
        counts[y] += 1;
    }
    let priors: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 / n as f64).clamp(PRIOR_EPS, 1.0 - PRIOR_EPS))
        .collect();
    let init: Vec<f64> = if k == 1 {
        vec![(priors[1] / priors[0]).ln()]
    } else {
        priors.iter().map(|p| p.ln()).collect()
    };

    let x = data.features().view();
    let sorted = SortedColumns::new(x);
    let samples: Vec<usize> = (0..n).collect();
    let tree_config = TreeConfig {
        max_depth: Some(config.max_depth),
        min_leaf: config.min_leaf,
    };
    // Raw scores, row-major [n, k].
    let mut raw: Vec<f64> = (0..n).flat_map(|_| init.iter().copied()).collect();
    let mut model = GbmModel {
        class_count,
        n_features: data.n_features(),
        learning_rate: config.learning_rate,
        init,
        trees: Vec::with_capacity(config.rounds),
        train_deviance: vec![deviance(&raw, labels, k)],
    };
    let scale = if k == 1 { 1.0 } else { (k as f64 - 1.0) / k as f64 };
    for _ in 0..config.rounds {
        let probs = probabilities(&raw, k);
        let round: Vec<TreeNode> = (0..k)
            .into_par_iter()
            .map(|c| {
                let (targets, weights): (Vec<f64>, Vec<f64>) = (0..n)
                    .map(|i| {
                        if k == 1 {
                            let p = probs[i * 2 + 1];
                            let y = if labels[i] == 1 { 1.0 } else { 0.0 };
                            (y - p, p * (1.0 - p))
                        } else {
                            let y = if labels[i] == c { 1.0 } else { 0.0 };
                            let r = y - probs[i * k + c];
                            (r, r.abs() * (1.0 - r.abs()))
                        }
                    })
                    .unzip();
                fit_regression_presorted(x, &sorted, &samples, &targets, Some(&weights), scale, tree_config)
            })
            .collect();
        for i in 0..n {
            let row = data.row(i);
            for (c, tree) in round.iter().enumerate() {
                raw[i * k + c] += config.learning_rate * tree.predict(row)[0];
            }
        }
        model.trees.push(round);
        model.train_deviance.push(deviance(&raw, labels, k));
    }
    Ok(model)
}

/// Class probabilities from raw scores `[n, k]`, as `[n, class_count]`.
fn probabilities(raw: &[f64], k: usize) -> Vec<f64> {
    if k == 1 {
        raw.iter()
            .flat_map(|&f| {
                let p = 1.0 / (1.0 + (-f).exp());
                [1.0 - p, p]
            })
            .collect()
    } else {
        let mut out = raw.to_vec();
        for row in out.chunks_mut(k) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        out
    }
}

/// Mean negative log-likelihood of the labels under raw scores.
fn deviance(raw: &[f64], labels: &[usize], k: usize) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if k == 1 {
                let f = raw[i];
                let z = if y == 1 { -f } else { f };
                // ln(1 + e^z) without overflow.
                z.max(0.0) + (-z.abs()).exp().ln_1p()
            } else {
                let row = &raw[i * k..(i + 1) * k];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - row[y]
            }
        })
        .sum();
    total / labels.len() as f64
}

impl GbmModel {
    fn raw_scores(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::shape(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        let k = outputs(self.class_count);
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let row = x.row(i).to_vec();
                let mut f = self.init.clone();
                for round in &self.trees {
                    for (c, tree) in round.iter().enumerate() {
                        f[c] += self.learning_rate * tree.predict(&row)[0];
                    }
                }
                f
            })
            .collect();
        debug_assert!(rows.iter().all(|r| r.len() == k));
        Ok(rows.into_iter().flatten().collect())
    }

    /// Class probabilities per row.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>> {
        let k = outputs(self.class_count);
        let probs = probabilities(&self.raw_scores(x)?, k);
        Ok(probs.chunks(self.class_count).map(<[f64]>::to_vec).collect())
    }

    /// Most probable class per row; ties go to the lower class.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(x)?
            .iter()
            .map(|p| crate::nn::network::argmax(p))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn xor_toy() -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (cx, cy, y) in [(0.0, 0.0, 0), (1.0, 1.0, 0), (0.0, 1.0, 1), (1.0, 0.0, 1)] {
            for _ in 0..25 {
                rows.push(vec![cx + rng.gen_range(-0.2..0.2), cy + rng.gen_range(-0.2..0.2)]);
                labels.push(y);
            }
        }
        Dataset::from_rows(&rows, labels).unwrap()
    }

    fn accuracy(model: &GbmModel, data: &Dataset) -> f64 {
        let preds = model.predict(data.features().view()).unwrap();
        preds.iter().zip(data.labels()).filter(|(p, y)| p == y).count() as f64 / data.n_rows() as f64
    }

    #[test]
    fn xor_clusters_binary_and_multiclass() {
        let data = xor_toy();
        let cfg = GbmConfig {
            rounds: 50,
            learning_rate: 0.1,
            max_depth: 2,
            min_leaf: 1,
        };
        let binary = fit_gbm(&data, &cfg, 2).unwrap();
        assert!(accuracy(&binary, &data) >= 0.95);
        let multi = fit_gbm(&data, &cfg, 3).unwrap();
        assert!(accuracy(&multi, &data) >= 0.95);
        for m in [&binary, &multi] {
            for w in m.train_deviance.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "deviance rose: {w:?}");
            }
        }
    }

    #[test]
    fn three_class_deviance_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..90)
            .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
            .collect();
        let labels: Vec<usize> = rows
            .iter()
            .map(|r| {
                if r[0] + 0.3 * rng.gen_range(-1.0..1.0) < 0.33 {
                    0
                } else if r[1] < 0.5 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let data = Dataset::from_rows(&rows, labels).unwrap();
        let model = fit_gbm(&data, &GbmConfig::default(), 3).unwrap();
        assert_eq!(model.train_deviance.len(), 101);
        for w in model.train_deviance.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "deviance rose: {w:?}");
        }
    }

    #[test]
    fn single_class_is_constant() {
        let data = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], vec![2, 2, 2]).unwrap();
        let model = fit_gbm(&data, &GbmConfig::default(), 3).unwrap();
        assert_eq!(model.predict(data.features().view()).unwrap(), vec![2, 2, 2]);
    }

    #[test]
    fn zero_rounds_predicts_priors() {
        let data = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]], vec![0, 1, 1, 2]).unwrap();
        let cfg = GbmConfig {
            rounds: 0,
            ..GbmConfig::default()
        };
        let probs = fit_gbm(&data, &cfg, 3)
            .unwrap()
            .predict_proba(data.features().view())
            .unwrap();
        for p in &probs {
            assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12 && (p[2] - 0.25).abs() < 1e-12);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let binary = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]], vec![0, 1, 1, 1]).unwrap();
        let probs = fit_gbm(&binary, &cfg, 2)
            .unwrap()
            .predict_proba(binary.features().view())
            .unwrap();
        assert!((probs[0][1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn hand_trace_two_stumps() {
        let stump = |threshold: f64, left: f64, right: f64| TreeNode::Split {
            feature: 0,
            threshold,
            left: Box::new(TreeNode::leaf(vec![left])),
            right: Box::new(TreeNode::leaf(vec![right])),
        };
        let model = GbmModel {
            class_count: 2,
            n_features: 1,
            learning_rate: 0.5,
            init: vec![0.2],
            trees: vec![vec![stump(1.0, -1.0, 2.0)], vec![stump(3.0, 0.4, -0.6)]],
            train_deviance: Vec::new(),
        };
        let x = ndarray::Array2::from_shape_vec((3, 1), vec![0.0, 2.0, 4.0]).unwrap();
        let probs = model.predict_proba(x.view()).unwrap();
        // x=0: 0.2 + 0.5(-1) + 0.5(0.4) = -0.1; x=2: 0.2 + 1 + 0.2 = 1.4; x=4: 0.2 + 1 - 0.3 = 0.9.
        for (p, f) in probs.iter().zip([-0.1f64, 1.4, 0.9]) {
            assert!((p[1] - 1.0 / (1.0 + (-f).exp())).abs() < 1e-12);
        }
        assert_eq!(model.predict(x.view()).unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn width_mismatch_is_error() {
        let data = xor_toy();
        let model = fit_gbm(
            &data,
            &GbmConfig {
                rounds: 2,
                ..GbmConfig::default()
            },
            2,
        )
        .unwrap();
        let x = ndarray::Array2::<f64>::zeros((2, 3));
        assert!(model.predict(x.view()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let model = fit_gbm(
            &xor_toy(),
            &GbmConfig {
                rounds: 3,
                ..GbmConfig::default()
            },
            3,
        )
        .unwrap();
        let back: GbmModel = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
