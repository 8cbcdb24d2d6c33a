//! Simulated rule knowledge from decision trees.

pub mod noise;
pub mod paths;
pub mod tree;

pub use noise::{inject_noise, noisy_count, NoiseReport};
pub use paths::{acquire_rules, canonical_bounds, extract_anomaly_paths, AcquireConfig, Provenance};
pub use tree::{fit_tree, fit_tree_rows, gini, DecisionTree, TreeConfig, TreeNode};
