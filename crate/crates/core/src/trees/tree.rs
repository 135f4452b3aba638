//! CART builder shared by boosting (variance reduction) and forests (Gini).
//!
//! Both criteria reduce to one scan: for `m`-dimensional targets `y`, pick the
//! split maximising `Σ_j S_Lj² / n_L + S_Rj² / n_R` where `S` are per-side target
//! sums. Scalar residuals give variance reduction; one-hot class indicators
//! give Gini impurity decrease.

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: Vec<f64>,
    },
}

impl TreeNode {
    pub fn leaf(value: Vec<f64>) -> Self {
        TreeNode::Leaf { value }
    }

    pub fn predict(&self, x: &[f64]) -> &[f64] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
                TreeNode::Leaf { value } => return value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
            TreeNode::Leaf { .. } => 0,
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
            TreeNode::Leaf { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: Some(3),
            min_leaf: 1,
        }
    }
}

/// Row orderings by each feature, computed once and reused across trees.
#[derive(Debug, Clone)]
pub struct SortedColumns {
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(x: ArrayView2<'_, f64>) -> Self {
        let order = x
            .columns()
            .into_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        SortedColumns { order }
    }
}

/// Features considered at each node.
pub(crate) enum FeatureDraw<'r, R: Rng> {
    All,
    Subset { count: usize, rng: &'r mut R },
}

/// Everything a build needs besides the node being grown.
pub(crate) struct Builder<'a, L: Fn(&[usize]) -> Vec<f64>> {
    pub x: ArrayView2<'a, f64>,
    /// Row-major `[n_rows, width]` targets.
    pub targets: &'a [f64],
    pub width: usize,
    pub config: TreeConfig,
    pub leaf_value: L,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<L: Fn(&[usize]) -> Vec<f64>> Builder<'_, L> {
    /// Grows a tree over `samples` (row indices, repeats allowed).
    pub fn build<R: Rng>(
        &self,
        sorted: &SortedColumns,
        samples: &[usize],
        features: &mut FeatureDraw<'_, R>,
    ) -> TreeNode {
        // Per-feature lists of positions into `samples`, ordered by value.
        let n_rows = self.x.nrows();
        let mut multiplicity = vec![0u32; n_rows];
        for &r in samples {
            multiplicity[r] += 1;
        }
        let mut first_pos = vec![u32::MAX; n_rows];
        let mut positions_of: Vec<Vec<u32>> = Vec::new();
        let has_repeats = multiplicity.iter().any(|&m| m > 1);
        if has_repeats {
            positions_of = vec![Vec::new(); n_rows];
            for (pos, &r) in samples.iter().enumerate() {
                positions_of[r].push(pos as u32);
            }
        } else {
            for (pos, &r) in samples.iter().enumerate() {
                first_pos[r] = pos as u32;
            }
        }
        let lists: Vec<Vec<u32>> = sorted
            .order
            .iter()
            .map(|col| {
                let mut list = Vec::with_capacity(samples.len());
                for &r in col {
                    let r = r as usize;
                    if multiplicity[r] == 0 {
                        continue;
                    }
                    if has_repeats {
                        list.extend_from_slice(&positions_of[r]);
                    } else {
                        list.push(first_pos[r]);
                    }
                }
                list
            })
            .collect();
        let mut goes_left = vec![false; samples.len()];
        self.grow(samples, lists, 0, features, &mut goes_left)
    }

    fn grow<R: Rng>(
        &self,
        samples: &[usize],
        lists: Vec<Vec<u32>>,
        depth: usize,
        features: &mut FeatureDraw<'_, R>,
        goes_left: &mut [bool],
    ) -> TreeNode {
        let node_positions = &lists[0];
        let node_rows: Vec<usize> = node_positions.iter().map(|&p| samples[p as usize]).collect();
        let make_leaf = |rows: &[usize]| TreeNode::Leaf {
            value: (self.leaf_value)(rows),
        };
        let n = node_rows.len();
        let depth_ok = self.config.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || n < 2 * self.config.min_leaf.max(1) || !self.impure(&node_rows) {
            return make_leaf(&node_rows);
        }
        let candidates: Vec<usize> = match features {
            FeatureDraw::All => (0..lists.len()).collect(),
            FeatureDraw::Subset { count, rng } => {
                let mut f = sample(rng, lists.len(), (*count).min(lists.len())).into_vec();
                f.sort_unstable();
                f
            }
        };
        let Some(best) = self.best_split(samples, &lists, &candidates) else {
            return make_leaf(&node_rows);
        };
        for &p in &lists[best.feature] {
            goes_left[p as usize] = self.x[[samples[p as usize], best.feature]] <= best.threshold;
        }
        let (left_lists, right_lists): (Vec<Vec<u32>>, Vec<Vec<u32>>) = lists
            .into_iter()
            .map(|list| list.into_iter().partition(|&p| goes_left[p as usize]))
            .unzip();
        let left = self.grow(samples, left_lists, depth + 1, features, goes_left);
        let right = self.grow(samples, right_lists, depth + 1, features, goes_left);
        TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn target(&self, row: usize) -> &[f64] {
        &self.targets[row * self.width..(row + 1) * self.width]
    }

    /// True when the node's target rows are not all identical.
    fn impure(&self, rows: &[usize]) -> bool {
        let first = self.target(rows[0]);
        rows[1..].iter().any(|&r| self.target(r) != first)
    }

    fn best_split(&self, samples: &[usize], lists: &[Vec<u32>], features: &[usize]) -> Option<Candidate> {
        let n = lists[0].len();
        let min_leaf = self.config.min_leaf.max(1);
        let w = self.width;
        let mut total = vec![0.0; w];
        for &p in &lists[0] {
            for (t, v) in total.iter_mut().zip(self.target(samples[p as usize])) {
                *t += v;
            }
        }
        let parent: f64 = total.iter().map(|s| s * s).sum::<f64>() / n as f64;
        let mut best: Option<Candidate> = None;
        let mut left = vec![0.0; w];
        for &f in features {
            let list = &lists[f];
            left.fill(0.0);
            for i in 0..n - 1 {
                let row = samples[list[i] as usize];
                for (l, v) in left.iter_mut().zip(self.target(row)) {
                    *l += v;
                }
                let n_left = i + 1;
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let here = self.x[[row, f]];
                let next = self.x[[samples[list[i + 1] as usize], f]];
                if here == next {
                    continue;
                }
                let score: f64 = left
                    .iter()
                    .zip(&total)
                    .map(|(l, t)| l * l / n_left as f64 + (t - l) * (t - l) / n_right as f64)
                    .sum();
                let gain = score - parent;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = here + (next - here) / 2.0;
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Regression tree on scalar `targets`. With `weights`, leaves hold the
/// Newton value `scale · Σ target / Σ weight` (zero when the weight sum
/// vanishes); without, the target mean.
pub fn fit_regression_tree(
    x: ArrayView2<'_, f64>,
    targets: &[f64],
    weights: Option<&[f64]>,
    config: TreeConfig,
) -> TreeNode {
    let sorted = SortedColumns::new(x);
    let samples: Vec<usize> = (0..x.nrows()).collect();
    fit_regression_presorted(x, &sorted, &samples, targets, weights, 1.0, config)
}

pub(crate) fn newton_leaf(rows: &[usize], targets: &[f64], weights: Option<&[f64]>, scale: f64) -> f64 {
    let num: f64 = rows.iter().map(|&r| targets[r]).sum();
    match weights {
        Some(w) => {
            let den: f64 = rows.iter().map(|&r| w[r]).sum();
            if den.abs() < 1e-150 {
                0.0
            } else {
                scale * num / den
            }
        }
        None => num / rows.len() as f64,
    }
}

pub(crate) fn fit_regression_presorted(
    x: ArrayView2<'_, f64>,
    sorted: &SortedColumns,
    samples: &[usize],
    targets: &[f64],
    weights: Option<&[f64]>,
    scale: f64,
    config: TreeConfig,
) -> TreeNode {
    if samples.is_empty() {
        return TreeNode::leaf(vec![0.0]);
    }
    let builder = Builder {
        x,
        targets,
        width: 1,
        config,
        leaf_value: |rows: &[usize]| vec![newton_leaf(rows, targets, weights, scale)],
    };
    builder.build::<rand_chacha::ChaCha8Rng>(sorted, samples, &mut FeatureDraw::All)
}

/// Gini classification tree; leaves hold class frequencies.
pub fn fit_classification_tree(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    class_count: usize,
    config: TreeConfig,
) -> TreeNode {
    let sorted = SortedColumns::new(x);
    let samples: Vec<usize> = (0..x.nrows()).collect();
    fit_gini(
        x,
        &sorted,
        &samples,
        labels,
        class_count,
        config,
        &mut FeatureDraw::<rand_chacha::ChaCha8Rng>::All,
    )
}

pub(crate) fn fit_gini<R: Rng>(
    x: ArrayView2<'_, f64>,
    sorted: &SortedColumns,
    samples: &[usize],
    labels: &[usize],
    class_count: usize,
    config: TreeConfig,
    features: &mut FeatureDraw<'_, R>,
) -> TreeNode {
    if samples.is_empty() {
        return TreeNode::leaf(vec![1.0 / class_count as f64; class_count]);
    }
    let mut onehot = vec![0.0; labels.len() * class_count];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * class_count + y] = 1.0;
    }
    let builder = Builder {
        x,
        targets: &onehot,
        width: class_count,
        config,
        leaf_value: |rows: &[usize]| {
            let mut v = vec![0.0; class_count];
            for &r in rows {
                v[labels[r]] += 1.0;
            }
            let n = rows.len() as f64;
            v.iter_mut().for_each(|c| *c /= n);
            v
        },
    };
    builder.build(sorted, samples, features)
}
