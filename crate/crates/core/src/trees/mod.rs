//! Decision trees, gradient boosting and random forests.

pub mod forest;
pub mod gbm;
pub mod tree;

pub use forest::{fit_random_forest, FeaturesPerSplit, ForestConfig, ForestModel};
pub use gbm::{fit_gbm, GbmConfig, GbmModel};
pub use tree::{fit_classification_tree, fit_regression_tree, SortedColumns, TreeConfig, TreeNode};
