use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_gini, FeatureDraw, SortedColumns, TreeConfig, TreeNode};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// How many features each split may look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    /// `max(1, round(sqrt(p)))`.
    Sqrt,
    All,
    Count(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, p: usize) -> usize {
        match self {
            FeaturesPerSplit::Sqrt => ((p as f64).sqrt().round() as usize).max(1),
            FeaturesPerSplit::All => p,
            FeaturesPerSplit::Count(n) => n.clamp(1, p.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            features_per_split: FeaturesPerSplit::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub class_count: usize,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
}

pub fn fit_random_forest(data: &Dataset, config: &ForestConfig, class_count: usize) -> Result<ForestModel> {
    if config.n_trees == 0 {
        return Err(Error::config("n_trees must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::config("training data is empty"));
    }
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= class_count) {
        return Err(Error::config(format!("label {bad} outside {class_count} classes")));
    }
    let x = data.features().view();
    let n = data.n_rows();
    let sorted = SortedColumns::new(x);
    let per_split = config.features_per_split.resolve(data.n_features());
    let tree_config = TreeConfig {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
    };
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds: Vec<u64> = (0..config.n_trees).map(|_| master.gen()).collect();
    let trees = seeds
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut draw = if per_split >= data.n_features() {
                FeatureDraw::All
            } else {
                FeatureDraw::Subset {
                    count: per_split,
                    rng: &mut rng,
                }
            };
            fit_gini(x, &sorted, &samples, data.labels(), class_count, tree_config, &mut draw)
        })
        .collect();
    Ok(ForestModel {
        class_count,
        n_features: data.n_features(),
        trees,
    })
}

impl ForestModel {
    /// Vote fractions per row: each tree votes for its leaf's majority class.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>> {
        if x.ncols() != self.n_features {
            return Err(Error::shape(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        let n_trees = self.trees.len() as f64;
        Ok((0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let row = x.row(i).to_vec();
                let mut votes = vec![0.0; self.class_count];
                for tree in &self.trees {
                    votes[crate::nn::network::argmax(tree.predict(&row))] += 1.0;
                }
                votes.iter_mut().for_each(|v| *v /= n_trees);
                votes
            })
            .collect())
    }

    /// Majority vote; ties go to the lower class.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(x)?
            .iter()
            .map(|v| crate::nn::network::argmax(v))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::tree::fit_classification_tree;

    fn blobs(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..80 {
            let y = i % 3;
            rows.push(vec![
                y as f64 + rng.gen_range(-0.8..0.8),
                rng.gen_range(0.0..1.0),
                (y * y) as f64 * 0.3 + rng.gen_range(-0.5..0.5),
            ]);
            labels.push(y);
        }
        Dataset::from_rows(&rows, labels).unwrap()
    }

    #[test]
    fn single_unbagged_tree_equals_gini_tree() {
        let data = blobs(1);
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            features_per_split: FeaturesPerSplit::All,
            ..ForestConfig::default()
        };
        let forest = fit_random_forest(&data, &cfg, 3).unwrap();
        let tree = fit_classification_tree(
            data.features().view(),
            data.labels(),
            3,
            TreeConfig {
                max_depth: None,
                min_leaf: 1,
            },
        );
        assert_eq!(forest.trees[0], tree);
        let x = data.features().view();
        let single: Vec<usize> = x
            .outer_iter()
            .map(|r| crate::nn::network::argmax(tree.predict(r.as_slice().unwrap())))
            .collect();
        assert_eq!(forest.predict(x).unwrap(), single);
    }

    #[test]
    fn separable_two_class_toy_is_fit_exactly() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let data = Dataset::from_rows(&rows, labels).unwrap();
        let forest = fit_random_forest(
            &data,
            &ForestConfig {
                n_trees: 25,
                ..ForestConfig::default()
            },
            2,
        )
        .unwrap();
        assert_eq!(forest.predict(data.features().view()).unwrap(), data.labels());
    }

    #[test]
    fn vote_tie_prefers_lower_class() {
        let forest = ForestModel {
            class_count: 3,
            n_features: 1,
            trees: vec![TreeNode::leaf(vec![0.0, 0.0, 1.0]), TreeNode::leaf(vec![1.0, 0.0, 0.0])],
        };
        let x = ndarray::Array2::<f64>::zeros((1, 1));
        assert_eq!(forest.predict(x.view()).unwrap(), vec![0]);
        assert_eq!(forest.predict_proba(x.view()).unwrap()[0], vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn seeded_forest_is_deterministic() {
        let data = blobs(2);
        let cfg = ForestConfig {
            n_trees: 10,
            seed: 77,
            ..ForestConfig::default()
        };
        let a = fit_random_forest(&data, &cfg, 3).unwrap();
        let b = fit_random_forest(&data, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = fit_random_forest(&data, &ForestConfig { seed: 78, ..cfg }, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn vote_fractions_sum_to_one() {
        let data = blobs(3);
        let forest = fit_random_forest(
            &data,
            &ForestConfig {
                n_trees: 7,
                ..ForestConfig::default()
            },
            3,
        )
        .unwrap();
        for p in forest.predict_proba(data.features().view()).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
