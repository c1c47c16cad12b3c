use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ElectrodeGeometry, LatentBundle, MixingConfig};
use crate::error::{Result, SpireError};
use crate::rng::{substream, SpireRng};

/// Fixed mixing for one region: linear kernel, optional product terms and
/// optional per-contact gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingKernels {
    /// `(contacts, d_shared + d_private)`; columns are unit-norm before the
    /// private gain is applied.
    pub linear: Array2<f64>,
    /// Latent index pairs for product terms.
    pub pairs: Vec<(usize, usize)>,
    /// `(contacts, pairs)` product coefficients.
    pub bilinear: Array2<f64>,
    /// Per-contact tanh slopes.
    pub gain: Option<Array1<f64>>,
}

fn product_pairs(d_sh: usize, d_pr: usize, within: bool, cross: bool) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    if within {
        for i in 0..d_sh {
            for j in i + 1..d_sh {
                pairs.push((i, j));
            }
        }
        for i in 0..d_pr {
            for j in i + 1..d_pr {
                pairs.push((d_sh + i, d_sh + j));
            }
        }
    }
    if cross {
        for i in 0..d_sh {
            for j in 0..d_pr {
                pairs.push((i, d_sh + j));
            }
        }
    }
    pairs
}

impl MixingKernels {
    /// Purely linear mixing with the given kernel.
    pub fn linear(kernel: Array2<f64>) -> Self {
        let c = kernel.nrows();
        MixingKernels {
            linear: kernel,
            pairs: Vec::new(),
            bilinear: Array2::zeros((c, 0)),
            gain: None,
        }
    }

    pub fn sample(geometry: &ElectrodeGeometry, d_sh: usize, d_pr: usize, cfg: &MixingConfig, rng: &mut SpireRng) -> Self {
        let c = geometry.contacts();
        let d = d_sh + d_pr;
        let rows = geometry.n_rows as f64;
        let cols = geometry.contacts_per_row as f64;
        let w2 = 2.0 * cfg.spatial_width * cfg.spatial_width;
        let mut linear = Array2::zeros((c, d));
        for k in 0..d {
            let cr = rng.random_range(-0.5..rows - 0.5);
            let cc = rng.random_range(-0.5..cols - 0.5);
            for ci in 0..c {
                let (i, j) = ((ci / geometry.contacts_per_row) as f64, (ci % geometry.contacts_per_row) as f64);
                let env = (-((i - cr).powi(2) + (j - cc).powi(2)) / w2).exp();
                let e: f64 = rng.sample(StandardNormal);
                linear[[ci, k]] = env * e;
            }
            let mut col = linear.column_mut(k);
            let norm = col.dot(&col).sqrt();
            if norm > 0.0 {
                col /= norm;
            }
            if k >= d_sh {
                col *= cfg.private_gain;
            }
        }

        let within = cfg.mode.has_bilinear();
        let pairs = product_pairs(d_sh, d_pr, within, cfg.cross_terms);
        let n_within = if within { product_pairs(d_sh, d_pr, true, false).len() } else { 0 };
        let n_cross = pairs.len() - n_within;
        let mut bilinear = Array2::zeros((c, pairs.len()));
        for (p, _) in pairs.iter().enumerate() {
            let scale = if p < n_within {
                cfg.bilinear_scale / (n_within as f64).sqrt()
            } else {
                cfg.cross_scale / (n_cross.max(1) as f64).sqrt()
            };
            for ci in 0..c {
                let e: f64 = rng.sample(StandardNormal);
                bilinear[[ci, p]] = scale * e;
            }
        }

        let gain = cfg.mode.has_gain().then(|| {
            let (lo, hi) = cfg.gain_slope;
            Array1::from_shape_fn(c, |_| if hi > lo { rng.random_range(lo..hi) } else { lo })
        });
        MixingKernels {
            linear,
            pairs,
            bilinear,
            gain,
        }
    }

    pub fn contacts(&self) -> usize {
        self.linear.nrows()
    }

    /// Mixes one trial of latents `(T, d)` into contacts `(T, C)`.
    pub fn apply(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.linear.ncols() {
            return Err(SpireError::shape(format!(
                "latents have {} dims, mixing kernel expects {}",
                z.ncols(),
                self.linear.ncols()
            )));
        }
        let mut out = z.dot(&self.linear.t());
        if !self.pairs.is_empty() {
            let products = Array2::from_shape_fn((z.nrows(), self.pairs.len()), |(t, p)| {
                let (i, j) = self.pairs[p];
                z[[t, i]] * z[[t, j]]
            });
            out += &products.dot(&self.bilinear.t());
        }
        if let Some(g) = &self.gain {
            for mut row in out.rows_mut() {
                for (v, &a) in row.iter_mut().zip(g.iter()) {
                    *v = (a * *v).tanh() / a;
                }
            }
        }
        Ok(out)
    }
}

/// Clean per-contact signals for every region, `(n_trials, T, contacts)`,
/// plus the kernels used.
pub fn mix_to_observations(
    latents: &LatentBundle,
    geometries: &[ElectrodeGeometry],
    cfg: &MixingConfig,
    seed: u64,
) -> Result<(Vec<Array3<f64>>, Vec<MixingKernels>)> {
    if geometries.len() != latents.n_regions() {
        return Err(SpireError::Geometry(format!(
            "{} geometries for {} latent regions",
            geometries.len(),
            latents.n_regions()
        )));
    }
    let mut signals = Vec::new();
    let mut kernels = Vec::new();
    for (r, g) in geometries.iter().enumerate() {
        if g.contacts() == 0 {
            return Err(SpireError::Geometry(format!("region `{}` has no contacts", g.name)));
        }
        let (n, t_len, d_sh) = latents.shared[r].dim();
        let d_pr = latents.private[r].len_of(Axis(2));
        let mut rng = substream(seed, "mixing", r as u64);
        let k = MixingKernels::sample(g, d_sh, d_pr, cfg, &mut rng);
        let mut out = Array3::zeros((n, t_len, g.contacts()));
        for trial in 0..n {
            let z = ndarray::concatenate(
                Axis(1),
                &[
                    latents.shared[r].index_axis(Axis(0), trial),
                    latents.private[r].index_axis(Axis(0), trial),
                ],
            )
            .expect("matching lengths");
            out.index_axis_mut(Axis(0), trial).assign(&k.apply(z.view())?);
        }
        signals.push(out);
        kernels.push(k);
    }
    Ok((signals, kernels))
}
