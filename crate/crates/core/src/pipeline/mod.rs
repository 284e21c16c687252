//! Staged training, inference and the end-to-end experiment.

mod config;
mod data;
mod experiment;
mod infer;
mod train;

pub use config::{ExperimentConfig, Preset, RunConfig, TrainConfig};
pub use data::{Dataset, Prepared};
pub use experiment::{def_name, run_experiment, ExperimentReport, SeedResult, BASELINE, DC_KMEANS, DEF_DL, IPSM_ORACLE, MIXTURE};
pub use infer::{estimates, evaluate_system, separate, separate_dc_baseline, separate_file, System};
pub use train::{build_loss, dev_metrics, stage_objective, train_stage, TrainLogEntry, TrainOutcome};
