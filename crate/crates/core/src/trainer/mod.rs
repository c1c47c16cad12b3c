//! Optimization loop: scheduled loss weights, private-gate ramp, shared
//! projection freeze, clipped Adam, plateau decay, early stopping and
//! resumable checkpoints.

mod checkpoint;
mod data;
mod optim;
mod schedule;

pub use checkpoint::{load_checkpoint, CHECKPOINT_MANIFEST, save_checkpoint, CheckpointExtras, CheckpointManifest, LoadedCheckpoint, TrainerState};
pub use data::{split_trials, NormStats, PreparedData};
pub use optim::{clip_grad_norm, zero_kinds, Adam, AdamConfig, EarlyStopping, PlateauScheduler};
pub use schedule::{private_gate, schedule_weights, Phase, ScheduleTable};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpireError};
use crate::losses::{loss_and_grads, total_loss, LossBreakdown, LossTerm, LossWeights};
use crate::model::{forward, EncoderDirection, Mode, ModelDims, ParamKind, SpireParams};
use crate::rng::substream;
use crate::synthgen::TrialDataset;

/// Architecture choices independent of the dataset's channel counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub d_shared: usize,
    pub d_private: usize,
    pub conv_halfwidth: usize,
    pub dropout: f64,
    /// Lag-augmentation depth `L`; inputs gain `L` shifted copies.
    pub lags: usize,
    #[serde(default)]
    pub encoder_direction: EncoderDirection,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            d_shared: 3,
            d_private: 3,
            conv_halfwidth: 4,
            dropout: 0.3,
            lags: 3,
            encoder_direction: EncoderDirection::Forward,
        }
    }
}

impl ModelConfig {
    /// Dimensions for raw channel counts (before lag augmentation).
    pub fn dims_for(&self, raw_channels: &[usize]) -> ModelDims {
        ModelDims {
            channels: raw_channels.iter().map(|c| c * (self.lags + 1)).collect(),
            hidden: self.hidden,
            d_shared: self.d_shared,
            d_private: self.d_private,
            conv_halfwidth: self.conv_halfwidth,
            dropout: self.dropout,
            encoder_direction: self.encoder_direction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub val_batch_size: usize,
    pub learning_rate: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub clip_norm: f64,
    pub early_stop_patience: usize,
    /// Epochs ignored by early stopping and best-checkpoint selection.
    pub early_stop_warmup: usize,
    pub split_fraction: f64,
    pub seed: u64,
    /// Keep aligner kernels at impulses and mappers at identity throughout.
    #[serde(default)]
    pub pin_aligners: bool,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 500,
            batch_size: 8,
            val_batch_size: 1,
            learning_rate: 1e-3,
            plateau_factor: 0.5,
            plateau_patience: 10,
            clip_norm: 1.0,
            early_stop_patience: 20,
            early_stop_warmup: 140,
            split_fraction: 0.8,
            seed: 0,
            pin_aligners: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_epochs", self.max_epochs as f64),
            ("batch_size", self.batch_size as f64),
            ("val_batch_size", self.val_batch_size as f64),
            ("learning_rate", self.learning_rate),
            ("plateau_factor", self.plateau_factor),
            ("clip_norm", self.clip_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SpireError::config(name, "must be positive"));
            }
        }
        if self.plateau_factor >= 1.0 {
            return Err(SpireError::config("plateau_factor", "must be below 1"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(SpireError::config("split_fraction", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

/// One record of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub lr: f64,
    pub alpha_p: f64,
    pub shared_frozen: bool,
    pub kernels_pinned: bool,
    pub train: BTreeMap<String, f64>,
    pub val: BTreeMap<String, f64>,
    /// Validation total under the final-phase weights.
    pub val_selection: f64,
    pub max_grad_norm: f64,
    pub max_clipped_norm: f64,
}

impl EpochRecord {
    pub fn val_breakdown(&self) -> LossBreakdown {
        LossBreakdown::from_map(&self.val)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let epochs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| SpireError::container("history.jsonl", e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainHistory { epochs })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validation checkpoint, or the last parameters when no epoch
    /// reached the selection window.
    pub params: SpireParams,
    pub final_params: SpireParams,
    pub history: TrainHistory,
    pub norm: NormStats,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
}

/// Where a run writes its history and checkpoints.
#[derive(Debug, Clone)]
pub struct RunIo {
    pub dir: PathBuf,
    /// Write a resumable checkpoint every this many epochs (0 = only at the
    /// end).
    pub checkpoint_every: usize,
    pub resume: bool,
}

impl RunIo {
    pub fn history_path(&self) -> PathBuf {
        self.dir.join("history.jsonl")
    }

    pub fn last_dir(&self) -> PathBuf {
        self.dir.join("checkpoint_last")
    }

    pub fn best_dir(&self) -> PathBuf {
        self.dir.join("checkpoint_best")
    }
}

/// Mean breakdown of `params` over `data`, in fixed batches, eval mode.
pub fn evaluate_loss(
    params: &SpireParams,
    data: &PreparedData,
    alpha_p: f64,
    weights: &LossWeights,
    batch_size: usize,
) -> Result<LossBreakdown> {
    let n = data.n_trials();
    let idx: Vec<usize> = (0..n).collect();
    let mut parts = Vec::new();
    let mut sizes = Vec::new();
    for chunk in idx.chunks(batch_size.max(1)) {
        let inputs = data.batch(chunk);
        let out = forward(params, &inputs, alpha_p, Mode::Eval)?;
        parts.push(total_loss(params, &inputs, &out, weights)?);
        sizes.push(chunk.len());
    }
    Ok(weighted_mean(&parts, &sizes, weights))
}

fn weighted_mean(parts: &[LossBreakdown], sizes: &[usize], weights: &LossWeights) -> LossBreakdown {
    let total: usize = sizes.iter().sum();
    let mut acc = LossBreakdown::default();
    for (b, &s) in parts.iter().zip(sizes) {
        let f = s as f64 / total as f64;
        for t in LossTerm::ALL {
            acc.set(t, acc.get(t) + f * b.get(t));
        }
    }
    acc.with_total(weights)
}

/// Splits `dataset`, fits normalisation on the training part and trains.
pub fn train(
    dataset: &TrialDataset,
    model: &ModelConfig,
    schedule: &ScheduleTable,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_io(dataset, model, schedule, config, None)
}

struct Loop<'a> {
    schedule: &'a ScheduleTable,
    config: &'a TrainConfig,
    model: &'a ModelConfig,
    train: PreparedData,
    val: PreparedData,
    norm: NormStats,
    params: SpireParams,
    adam: Adam,
    lr: f64,
    plateau: PlateauScheduler,
    early: EarlyStopping,
    best: Option<SpireParams>,
    stopped: bool,
    next_epoch: usize,
    train_ids: Vec<usize>,
    val_ids: Vec<usize>,
}

impl Loop<'_> {
    fn state(&self) -> TrainerState {
        TrainerState {
            next_epoch: self.next_epoch,
            lr: self.lr,
            plateau: self.plateau.clone(),
            early_stop: self.early.clone(),
            adam_step: self.adam.step,
            stopped: self.stopped,
            train_ids: self.train_ids.clone(),
            val_ids: self.val_ids.clone(),
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(
            dir,
            &self.params,
            self.model,
            &self.norm,
            self.config.seed,
            self.next_epoch.saturating_sub(1),
            CheckpointExtras {
                state: Some(self.state()),
                adam: Some((&self.adam.m, &self.adam.v)),
                best: self.best.as_ref(),
            },
        )
    }

    fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let weights = schedule_weights(self.schedule, epoch);
        let alpha = private_gate(self.schedule, epoch);
        let frozen = self.schedule.shared_frozen(epoch);
        let kernels_pinned = self.config.pin_aligners || self.schedule.kernels_pinned(epoch);
        let mut skip = Vec::new();
        if frozen {
            skip.push(ParamKind::SharedProjection);
        }
        if kernels_pinned {
            skip.push(ParamKind::AlignKernel);
        }
        if self.config.pin_aligners {
            skip.push(ParamKind::Mapper);
        }

        let mut rng = substream(self.config.seed, "epoch", epoch as u64);
        let mut order: Vec<usize> = (0..self.train.n_trials()).collect();
        order.shuffle(&mut rng);

        let mut parts = Vec::new();
        let mut sizes = Vec::new();
        let mut max_norm: f64 = 0.0;
        let mut max_clipped: f64 = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let inputs = self.train.batch(chunk);
            let out = forward(&self.params, &inputs, alpha, Mode::Train(&mut rng))?;
            let (lb, mut grads) = loss_and_grads(&self.params, &inputs, &out, &weights)?;
            if let Some(t) = lb.non_finite_term() {
                return Err(SpireError::Divergence {
                    epoch,
                    term: t.name().to_string(),
                });
            }
            if !lb.total.is_finite() {
                return Err(SpireError::Divergence {
                    epoch,
                    term: "total".into(),
                });
            }
            zero_kinds(&mut grads, &skip);
            let norm = clip_grad_norm(&mut grads, self.config.clip_norm);
            if !norm.is_finite() {
                return Err(SpireError::Divergence {
                    epoch,
                    term: "gradient".into(),
                });
            }
            max_norm = max_norm.max(norm);
            max_clipped = max_clipped.max(grads.global_norm());
            self.adam.update(&mut self.params, &grads, self.lr, &skip);
            parts.push(lb);
            sizes.push(chunk.len());
        }
        let train_lb = weighted_mean(&parts, &sizes, &weights);

        let val_lb = evaluate_loss(&self.params, &self.val, alpha, &weights, self.config.val_batch_size)?;
        if let Some(t) = val_lb.non_finite_term() {
            return Err(SpireError::Divergence {
                epoch,
                term: format!("val {}", t.name()),
            });
        }
        let selection = val_lb.weighted_total(self.schedule.final_weights());
        let lr_used = self.lr;
        self.lr = self.plateau.step(val_lb.total, self.lr);
        let (improved, stop) = self.early.step(epoch, selection);
        if improved {
            self.best = Some(self.params.clone());
        }
        self.stopped = stop;

        Ok(EpochRecord {
            epoch,
            phase: self.schedule.phase_at(epoch).name.clone(),
            lr: lr_used,
            alpha_p: alpha,
            shared_frozen: frozen,
            kernels_pinned,
            train: train_lb.to_map(),
            val: val_lb.to_map(),
            val_selection: selection,
            max_grad_norm: max_norm,
            max_clipped_norm: max_clipped,
        })
    }
}

fn append_history(path: &Path, record: &EpochRecord) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| SpireError::io(path, e))?;
    let line = serde_json::to_string(record).expect("record serializes") + "\n";
    f.write_all(line.as_bytes()).map_err(|e| SpireError::io(path, e))
}

/// [`train`] with optional on-disk history, periodic checkpoints and
/// resume.
pub fn train_with_io(
    dataset: &TrialDataset,
    model: &ModelConfig,
    schedule: &ScheduleTable,
    config: &TrainConfig,
    io: Option<&RunIo>,
) -> Result<TrainOutcome> {
    config.validate()?;
    schedule.validate(config.max_epochs)?;
    let (train_set, val_set) = split_trials(dataset, config.split_fraction, config.seed)?;
    let norm = NormStats::fit(&train_set);
    let train_data = PreparedData::new(&train_set, &norm, model.lags)?;
    let val_data = PreparedData::new(&val_set, &norm, model.lags)?;
    let dims = model.dims_for(&dataset.channels());
    let params = SpireParams::init(&dims, config.seed)?;

    let mut lp = Loop {
        schedule,
        config,
        model,
        train: train_data,
        val: val_data,
        norm,
        adam: Adam::new(&params, config.adam),
        params,
        lr: config.learning_rate,
        plateau: PlateauScheduler::new(config.plateau_factor, config.plateau_patience),
        early: EarlyStopping::new(config.early_stop_patience, config.early_stop_warmup),
        best: None,
        stopped: false,
        next_epoch: 0,
        train_ids: train_set.trial_ids.clone(),
        val_ids: val_set.trial_ids.clone(),
    };
    let mut history = TrainHistory::default();

    if let Some(io) = io {
        crate::container::ensure_dir(&io.dir)?;
        let hist_path = io.history_path();
        let resumed = io.resume && io.last_dir().join(checkpoint::CHECKPOINT_MANIFEST).exists();
        if resumed {
            let ck = load_checkpoint(&io.last_dir())?;
            let state = ck
                .manifest
                .state
                .clone()
                .ok_or_else(|| SpireError::container(io.last_dir(), "checkpoint has no trainer state"))?;
            if ck.manifest.dims != dims || ck.manifest.seed != config.seed || state.train_ids != lp.train_ids {
                return Err(SpireError::container(io.last_dir(), "checkpoint does not match this run's configuration"));
            }
            lp.params = ck.params;
            let (m, v) = ck
                .adam
                .ok_or_else(|| SpireError::container(io.last_dir(), "checkpoint has no optimizer state"))?;
            lp.adam.m = m;
            lp.adam.v = v;
            lp.adam.step = state.adam_step;
            lp.lr = state.lr;
            lp.plateau = state.plateau;
            lp.early = state.early_stop;
            lp.best = ck.best;
            lp.stopped = state.stopped;
            lp.next_epoch = state.next_epoch;
            let text = fs::read_to_string(&hist_path).unwrap_or_default();
            history = TrainHistory::from_jsonl(&text)?;
            history.epochs.retain(|r| r.epoch < lp.next_epoch);
            fs::write(&hist_path, history.to_jsonl()).map_err(|e| SpireError::io(&hist_path, e))?;
            log::info!("resuming from epoch {}", lp.next_epoch);
        } else if hist_path.exists() {
            fs::remove_file(&hist_path).map_err(|e| SpireError::io(&hist_path, e))?;
        }
    }

    while lp.next_epoch < config.max_epochs && !lp.stopped {
        let epoch = lp.next_epoch;
        let record = lp.run_epoch(epoch)?;
        log::debug!(
            "epoch {epoch} [{}] train {:.5} val {:.5} lr {:.2e} alpha {:.3}",
            record.phase,
            record.train["total"],
            record.val["total"],
            record.lr,
            record.alpha_p
        );
        lp.next_epoch += 1;
        if let Some(io) = io {
            append_history(&io.history_path(), &record)?;
        }
        history.epochs.push(record);
        if let Some(io) = io {
            if io.checkpoint_every > 0 && lp.next_epoch % io.checkpoint_every == 0 {
                lp.save(&io.last_dir())?;
            }
        }
    }

    let best_epoch = lp.early.best_epoch;
    let best = lp.best.clone().unwrap_or_else(|| lp.params.clone());
    if let Some(io) = io {
        lp.save(&io.last_dir())?;
        save_checkpoint(
            &io.best_dir(),
            &best,
            model,
            &lp.norm,
            config.seed,
            best_epoch.unwrap_or(lp.next_epoch.saturating_sub(1)),
            CheckpointExtras {
                state: None,
                adam: None,
                best: None,
            },
        )?;
    }
    Ok(TrainOutcome {
        params: best,
        final_params: lp.params,
        history,
        norm: lp.norm,
        best_epoch,
        stopped_early: lp.stopped,
        train_ids: lp.train_ids,
        val_ids: lp.val_ids,
    })
}
