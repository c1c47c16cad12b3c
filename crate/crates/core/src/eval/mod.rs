//! Evaluation metrics and per-seed reports.

mod cca;
mod forest;
mod fve;
mod mmd;
mod recovery;
mod report;

pub use cca::{cca_align, cca_align_with_ridge, CcaResult, CCA_RIDGE};
pub use forest::{decode_labels, DecodeResult, RandomForest, MAX_PER_CLASS};
pub use fve::{
    fve, select_model, variance_partition, FveResult, ModelCandidate, Selection, VariancePartition, DEFAULT_FOLDS,
    DEFAULT_RIDGE_SCALE, TAU_REDUNDANT, TAU_UNIQUE,
};
pub use mmd::{median_bandwidth, mmd_permutation_test, mmd_unbiased, MmdTest};
pub use recovery::{
    evaluate_latent_recovery, latent_recovery_from, pooled_observations, reconstruction_report, truncated_ground_truth,
    ExtractedLatents, LatentRecovery, SubsetMse, TrainedModel,
};
pub use report::{evaluate_run, DecodeRow, EvalOptions, EvalReport, Metric, MmdRow, ReportRow, RunEval, Skip};
