//! Configured experiments: cross-validated training, probing, reports and the command line.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod report;
pub mod run;

pub use cli::{cli_dispatch, evaluate_checkpoint, Cli, Command};
pub use config::{ExperimentConfig, ExperimentKind, Fusion, Seeds};
pub use dataset::{class_index, label_of_class, load_dataset, Dataset, ViewSource};
pub use evaluate::{argmax, evaluate, fuse, Evaluation};
pub use report::{collect_records, render_csv, render_markdown, write_report};
pub use run::{
    audit_split, center_samples, cross_validate, pretrain, run_experiment, run_probe, source_network, ExperimentRecord,
    FoldRecord, PretrainResult, Variant,
};
