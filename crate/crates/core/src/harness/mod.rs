//! End-to-end experiment runner: overfitting sweeps with epoch snapshots,
//! defense comparisons, vulnerable-sample analysis, the reweighting defense,
//! and exclude-and-retrain.

mod config;
mod experiment;
mod export;
mod report;

pub use config::{parse_reweight, DatasetSource, Defense, DefenseVariant, ExperimentConfig, DEFAULT_VALIDATION_FRACTION};
pub use experiment::{
    compare_defenses, exclude_and_retrain, prepare, run_experiment, run_prepared, run_with_model, vulnerable_union,
    welch_one_sided, ExperimentRun, Prepared,
};
pub use export::{export_report, export_run, read_report, validate_report_schema, write_invalid_marker};
pub use report::*;
