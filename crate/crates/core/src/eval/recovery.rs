use std::path::Path;

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::cca::{cca_align, CcaResult};
use crate::error::{Result, SpireError};
use crate::model::{decode, forward, Mode, SpireParams};
use crate::synthgen::{LatentBundle, TrialDataset};
use crate::trainer::{load_checkpoint, ModelConfig, NormStats, PreparedData};

const CHUNK: usize = 16;

/// Parameters plus the preprocessing they were trained with.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: SpireParams,
    pub norm: NormStats,
    pub model: ModelConfig,
}

/// Latents of every trial, batch-major `(n, T - L, d)` per region.
#[derive(Debug, Clone)]
pub struct ExtractedLatents {
    pub shared: Vec<Array3<f64>>,
    pub private: Vec<Array3<f64>>,
    /// Aligned shared latents per ordered pair `(source, target, z̃)`.
    pub aligned: Vec<(usize, usize, Array3<f64>)>,
}

fn pooled(a: &Array3<f64>) -> Array2<f64> {
    let (n, t, d) = a.dim();
    a.as_standard_layout().into_owned().into_shape_with_order((n * t, d)).expect("contiguous")
}

impl ExtractedLatents {
    pub fn pooled_shared(&self, r: usize) -> Array2<f64> {
        pooled(&self.shared[r])
    }

    pub fn pooled_private(&self, r: usize) -> Array2<f64> {
        pooled(&self.private[r])
    }
}

fn to_batch_major(x: &Array3<f64>) -> Array3<f64> {
    x.view().permuted_axes([1, 0, 2]).as_standard_layout().into_owned()
}

impl TrainedModel {
    pub fn load(checkpoint_dir: &Path) -> Result<Self> {
        let ck = load_checkpoint(checkpoint_dir)?;
        Ok(TrainedModel {
            params: ck.params,
            norm: ck.manifest.norm,
            model: ck.manifest.model,
        })
    }

    pub fn prepare(&self, dataset: &TrialDataset) -> Result<PreparedData> {
        let expected = self.model.dims_for(&dataset.channels());
        if expected.channels != self.params.dims.channels {
            return Err(SpireError::shape(format!(
                "model expects {:?} input channels, dataset gives {:?}",
                self.params.dims.channels, expected.channels
            )));
        }
        PreparedData::new(dataset, &self.norm, self.model.lags)
    }

    /// Eval-mode latents with the private gate fully open.
    pub fn latents(&self, dataset: &TrialDataset) -> Result<ExtractedLatents> {
        let data = self.prepare(dataset)?;
        let n = data.n_trials();
        let r_count = self.params.dims.regions();
        let mut shared: Vec<Vec<Array3<f64>>> = vec![Vec::new(); r_count];
        let mut private: Vec<Vec<Array3<f64>>> = vec![Vec::new(); r_count];
        let mut aligned: Vec<Vec<Array3<f64>>> = vec![Vec::new(); self.params.aligners.len()];
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(CHUNK) {
            let out = forward(&self.params, &data.batch(chunk), 1.0, Mode::Eval)?;
            for (r, rf) in out.regions.iter().enumerate() {
                shared[r].push(to_batch_major(&rf.z_shared));
                private[r].push(to_batch_major(&rf.z_private));
            }
            for (k, pf) in out.pairs.iter().enumerate() {
                aligned[k].push(to_batch_major(&pf.z_tilde));
            }
        }
        let cat = |parts: Vec<Array3<f64>>| {
            let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("matching shapes")
        };
        Ok(ExtractedLatents {
            shared: shared.into_iter().map(cat).collect(),
            private: private.into_iter().map(cat).collect(),
            aligned: self
                .params
                .aligners
                .iter()
                .zip(aligned)
                .map(|(a, parts)| (a.source, a.target, cat(parts)))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecovery {
    pub shared: Vec<CcaResult>,
    pub private: Vec<CcaResult>,
    /// Mean canonical correlation, averaged over regions.
    pub mean_shared: f64,
    pub mean_private: f64,
    /// Per-dimension canonical correlations averaged over regions.
    pub shared_per_dim: Vec<f64>,
    pub private_per_dim: Vec<f64>,
}

/// Ground truth restricted to the dataset's trials with the first `lags`
/// samples dropped, pooled to `(n (T - L), d)`.
pub fn truncated_ground_truth(block: &Array3<f64>, trial_ids: &[usize], lags: usize) -> Array2<f64> {
    let sel = block.select(Axis(0), trial_ids);
    pooled(&sel.slice(s![.., lags.., ..]).to_owned())
}

fn mean_per_dim(results: &[CcaResult]) -> Vec<f64> {
    let k = results[0].correlations.len();
    (0..k)
        .map(|i| results.iter().map(|r| r.correlations[i]).sum::<f64>() / results.len() as f64)
        .collect()
}

/// CCA between recovered and ground-truth latents per region, shared and
/// private separately, pooled over trials and time.
pub fn latent_recovery_from(latents: &ExtractedLatents, bundle: &LatentBundle, trial_ids: &[usize], lags: usize) -> Result<LatentRecovery> {
    if trial_ids.iter().any(|&i| i >= bundle.n_trials()) {
        return Err(SpireError::shape("dataset trial ids exceed the ground-truth trial count"));
    }
    let mut shared = Vec::new();
    let mut private = Vec::new();
    for r in 0..latents.shared.len() {
        let gt_sh = truncated_ground_truth(&bundle.shared[r], trial_ids, lags);
        let gt_pr = truncated_ground_truth(&bundle.private[r], trial_ids, lags);
        let z_sh = latents.pooled_shared(r);
        let z_pr = latents.pooled_private(r);
        if z_sh.nrows() != gt_sh.nrows() {
            return Err(SpireError::shape("recovered and ground-truth latents differ in length"));
        }
        let k_sh = z_sh.ncols().min(gt_sh.ncols());
        let k_pr = z_pr.ncols().min(gt_pr.ncols());
        shared.push(cca_align(z_sh.view(), gt_sh.view(), k_sh)?);
        private.push(cca_align(z_pr.view(), gt_pr.view(), k_pr)?);
    }
    let mean = |v: &[CcaResult]| v.iter().map(|r| r.mean()).sum::<f64>() / v.len() as f64;
    Ok(LatentRecovery {
        mean_shared: mean(&shared),
        mean_private: mean(&private),
        shared_per_dim: mean_per_dim(&shared),
        private_per_dim: mean_per_dim(&private),
        shared,
        private,
    })
}

pub fn evaluate_latent_recovery(model: &TrainedModel, dataset: &TrialDataset, bundle: Option<&LatentBundle>) -> Result<LatentRecovery> {
    let bundle = bundle.ok_or_else(|| SpireError::UnsupportedDataset("latent recovery needs ground-truth latents".into()))?;
    let latents = model.latents(dataset)?;
    latent_recovery_from(&latents, bundle, &dataset.trial_ids, model.model.lags)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetMse {
    pub full: f64,
    pub private_only: f64,
    pub shared_self: f64,
    pub shared_cross: f64,
}

fn mse(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    (a - b).iter().map(|v| v * v).sum::<f64>() / a.len() as f64
}

/// Per-region MSE (normalised units) of reconstructions from all latents,
/// private only, own shared only, and the other region's aligned shared
/// latents. Multiple source regions are averaged for the cross subset.
pub fn reconstruction_report(model: &TrainedModel, dataset: &TrialDataset) -> Result<Vec<SubsetMse>> {
    let data = model.prepare(dataset)?;
    let n = data.n_trials();
    let r_count = model.params.dims.regions();
    let mut sums = vec![[0.0f64; 4]; r_count];
    let mut count = 0usize;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(CHUNK) {
        let inputs = data.batch(chunk);
        let out = forward(&model.params, &inputs, 1.0, Mode::Eval)?;
        let w = chunk.len() as f64;
        for (r, rf) in out.regions.iter().enumerate() {
            let p = &model.params.regions[r];
            let zeros = Array3::zeros(rf.z_shared.raw_dim());
            let priv_only = decode(p, zeros.view(), Some(rf.z_private.view()), 1.0)?;
            let x = &inputs[r];
            let crosses: Vec<f64> = out
                .pairs
                .iter()
                .filter(|pf| pf.target == r)
                .map(|pf| mse(x, &pf.cross.x_hat))
                .collect();
            let cross = crosses.iter().sum::<f64>() / crosses.len().max(1) as f64;
            let vals = [
                mse(x, &rf.full.x_hat),
                mse(x, &priv_only.x_hat),
                mse(x, &rf.self_only.x_hat),
                cross,
            ];
            for (s, v) in sums[r].iter_mut().zip(vals) {
                *s += w * v;
            }
        }
        count += chunk.len();
    }
    Ok(sums
        .into_iter()
        .map(|s| SubsetMse {
            full: s[0] / count as f64,
            private_only: s[1] / count as f64,
            shared_self: s[2] / count as f64,
            shared_cross: s[3] / count as f64,
        })
        .collect())
}

/// Normalised observed channels (lag 0 block) pooled to `(n (T - L), C)`.
pub fn pooled_observations(model: &TrainedModel, dataset: &TrialDataset) -> Result<Vec<Array2<f64>>> {
    let data = model.prepare(dataset)?;
    Ok(data
        .regions
        .iter()
        .zip(dataset.channels())
        .map(|(x, c)| pooled(&x.slice(s![.., .., ..c]).to_owned()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_preset, Preset};
    use crate::trainer::ModelConfig;

    #[test]
    fn ground_truth_wired_latents_give_unit_cca() {
        let (d, b) = generate_preset(Preset::D0, 0).unwrap();
        let ids: Vec<usize> = vec![3, 10, 11, 40, 41];
        let lags = 3;
        let latents = ExtractedLatents {
            shared: b.shared.iter().map(|s| s.select(Axis(0), &ids).slice(s![.., lags.., ..]).to_owned()).collect(),
            private: b.private.iter().map(|s| s.select(Axis(0), &ids).slice(s![.., lags.., ..]).to_owned()).collect(),
            aligned: Vec::new(),
        };
        let rec = latent_recovery_from(&latents, &b, &ids, lags).unwrap();
        assert!((rec.mean_shared - 1.0).abs() < 1e-6);
        assert!((rec.mean_private - 1.0).abs() < 1e-6);
        let _ = d;
    }

    #[test]
    fn missing_ground_truth_is_unsupported() {
        let (d, _) = generate_preset(Preset::D0, 0).unwrap();
        let cfg = ModelConfig {
            hidden: 4,
            ..ModelConfig::default()
        };
        let params = SpireParams::init(&cfg.dims_for(&d.channels()), 0).unwrap();
        let m = TrainedModel {
            params,
            norm: NormStats::fit(&d),
            model: cfg,
        };
        assert!(matches!(evaluate_latent_recovery(&m, &d, None), Err(SpireError::UnsupportedDataset(_))));
    }

    #[test]
    fn zero_decoder_reconstructs_nothing() {
        let (d, _) = generate_preset(Preset::D0, 0).unwrap();
        let d = d.select_trials(&[0, 1, 2, 3], crate::synthgen::SplitTag::Val);
        let cfg = ModelConfig {
            hidden: 4,
            ..ModelConfig::default()
        };
        let mut params = SpireParams::init(&cfg.dims_for(&d.channels()), 0).unwrap();
        for r in params.regions.iter_mut() {
            r.readout_w.fill(0.0);
            r.readout_b.fill(0.0);
        }
        let m = TrainedModel {
            params,
            norm: NormStats::fit(&d),
            model: cfg,
        };
        let data = m.prepare(&d).unwrap();
        let rep = reconstruction_report(&m, &d).unwrap();
        for (r, s) in rep.iter().enumerate() {
            let power = data.regions[r].iter().map(|v| v * v).sum::<f64>() / data.regions[r].len() as f64;
            for v in [s.full, s.private_only, s.shared_self, s.shared_cross] {
                assert!((v - power).abs() < 1e-12);
            }
        }
    }
}
