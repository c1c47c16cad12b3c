use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpireError};
use crate::model::lag_augment;
use crate::rng::substream;
use crate::synthgen::{SplitTag, TrialDataset};

/// Disjoint trial-level train/validation split, deterministic per seed.
pub fn split_trials(dataset: &TrialDataset, fraction: f64, seed: u64) -> Result<(TrialDataset, TrialDataset)> {
    let n = dataset.n_trials();
    if n < 2 {
        return Err(SpireError::Argument(format!("need at least 2 trials to split, have {n}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SpireError::config("split_fraction", "must lie strictly between 0 and 1"));
    }
    let n_train = (n as f64 * fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(SpireError::Argument(format!(
            "split fraction {fraction} of {n} trials leaves an empty partition"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "split", 0));
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((
        dataset.select_trials(&train, SplitTag::Train),
        dataset.select_trials(&val, SplitTag::Val),
    ))
}

/// Per-region, per-channel mean and standard deviation of the raw
/// observations, fitted on training trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl NormStats {
    pub fn fit(dataset: &TrialDataset) -> Self {
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for o in &dataset.observations {
            let c = o.len_of(Axis(2));
            let flat = o.view().into_shape_with_order((o.len() / c, c)).expect("contiguous observations");
            let m = flat.mean_axis(Axis(0)).expect("non-empty");
            let s = flat.var_axis(Axis(0), 0.0).mapv(|v| v.sqrt().max(1e-8));
            mean.push(m.to_vec());
            std.push(s.to_vec());
        }
        NormStats { mean, std }
    }

    pub fn identity(channels: &[usize]) -> Self {
        NormStats {
            mean: channels.iter().map(|&c| vec![0.0; c]).collect(),
            std: channels.iter().map(|&c| vec![1.0; c]).collect(),
        }
    }

    pub fn apply(&self, region: usize, x: &Array3<f64>) -> Array3<f64> {
        let mut out = x.clone();
        for (c, mut col) in out.axis_iter_mut(Axis(2)).enumerate() {
            let (m, s) = (self.mean[region][c], self.std[region][c]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }
}

/// Normalised, lag-augmented trials, batch-major `(n, T - L, C(L + 1))` per
/// region.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub regions: Vec<Array3<f64>>,
}

impl PreparedData {
    pub fn new(dataset: &TrialDataset, norm: &NormStats, lags: usize) -> Result<Self> {
        if norm.mean.len() != dataset.n_regions() {
            return Err(SpireError::shape("normalisation stats do not match region count"));
        }
        let regions = dataset
            .observations
            .iter()
            .enumerate()
            .map(|(r, o)| {
                if norm.mean[r].len() != o.len_of(Axis(2)) {
                    return Err(SpireError::shape(format!("region {r}: normalisation stats do not match channels")));
                }
                lag_augment(norm.apply(r, o).view(), lags)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedData { regions })
    }

    pub fn n_trials(&self) -> usize {
        self.regions[0].len_of(Axis(0))
    }

    pub fn seq_len(&self) -> usize {
        self.regions[0].len_of(Axis(1))
    }

    pub fn channels(&self) -> Vec<usize> {
        self.regions.iter().map(|x| x.len_of(Axis(2))).collect()
    }

    /// Time-major `(T, B, F)` batch for the given trial positions.
    pub fn batch(&self, trials: &[usize]) -> Vec<Array3<f64>> {
        self.regions
            .iter()
            .map(|x| {
                x.select(Axis(0), trials)
                    .permuted_axes([1, 0, 2])
                    .as_standard_layout()
                    .into_owned()
            })
            .collect()
    }
}
