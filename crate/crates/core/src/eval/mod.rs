//! Split protocol, metrics, synthetic data, and experiment orchestration.

pub mod dataset;
pub mod experiment;
pub mod metrics;
pub mod synthetic;

pub use dataset::{parse_csv, read_csv, split_dataset, write_csv, Dataset, Split, TabularData};
pub use experiment::{
    build_knowledge, noise_study, report_csv, report_table, run_experiment, run_experiment_with_rules, run_seed, seed_rules,
    summarize, ExperimentConfig, Knowledge, KnowledgeSetup, MetricReport, RunRow, Summary,
};
pub use metrics::{auprc, f1_at_k, precision_at_k, rec_at_k, RecAtK};
pub use synthetic::{feature_names, make_synthetic, SyntheticConfig};
