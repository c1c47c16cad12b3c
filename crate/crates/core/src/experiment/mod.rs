//! Experiment orchestration behind the `spire` command line.

mod ablation;
mod commands;
mod config;
pub mod plots;

pub use ablation::{registry, AblationSpec, Control, ALIGN_FAMILY_VARIANT, FULL_VARIANT};
pub use commands::{
    cmd_ablate, cmd_eval, cmd_generate, cmd_report, cmd_train, dataset_dir, exit_code, held_out_trials, load_data, run_dir,
    train_one, write_report, AblationRow, AblationTable, RegimeRow, RunMeta, RunStatus, EVAL_JSON, RESOLVED_CONFIG, RUN_META,
};
pub use config::{resolve_out_root, DataSpec, ExperimentConfig, ScheduleSpec, OUT_ENV};
