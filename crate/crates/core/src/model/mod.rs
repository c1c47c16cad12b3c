//! Dual-latent recurrent autoencoder with cross-region aligners.

mod align;
mod forward;
mod gru;
mod lag;

pub use align::{apply_mapper, conv_align_backward, conv_align_map, depthwise_conv, AlignerParams};
pub use forward::{
    accumulate as forward_accumulate, backward, decode, encode, forward, DecodeTrace, EncodeTrace, ForwardOutputs, Mode, OutputGrads,
    PairForward, RegionForward,
};
pub use gru::{GruParams, GruTrace};
pub use lag::lag_augment;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpireError};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderDirection {
    #[default]
    Forward,
    Bidirectional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Input channels per region after lag augmentation.
    pub channels: Vec<usize>,
    pub hidden: usize,
    pub d_shared: usize,
    pub d_private: usize,
    /// Aligner kernels have length `2K + 1`.
    pub conv_halfwidth: usize,
    pub dropout: f64,
    #[serde(default)]
    pub encoder_direction: EncoderDirection,
}

impl ModelDims {
    pub fn regions(&self) -> usize {
        self.channels.len()
    }

    pub fn d_latent(&self) -> usize {
        self.d_shared + self.d_private
    }

    /// Width of the encoder state fed to the projections.
    pub fn encoder_width(&self) -> usize {
        match self.encoder_direction {
            EncoderDirection::Forward => self.hidden,
            EncoderDirection::Bidirectional => 2 * self.hidden,
        }
    }

    /// Ordered `(source, target)` pairs, one aligner each.
    pub fn ordered_pairs(&self) -> Vec<(usize, usize)> {
        let r = self.regions();
        (0..r)
            .flat_map(|s| (0..r).filter(move |&t| t != s).map(move |t| (s, t)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions() < 2 {
            return Err(SpireError::config("channels", "at least two regions are required"));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(SpireError::config("channels", "every region needs at least one channel"));
        }
        if self.d_shared == 0 || self.d_private == 0 {
            return Err(SpireError::config("d_shared/d_private", "latent dimensions must be positive"));
        }
        if self.hidden < self.d_shared.max(self.d_private) {
            return Err(SpireError::config(
                "hidden",
                "hidden size must be at least max(d_shared, d_private)",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SpireError::config("dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Coarse parameter groups, used by the trainer's freeze and pinning rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Encoder,
    SharedProjection,
    PrivateProjection,
    DecoderInput,
    Decoder,
    Readout,
    AlignKernel,
    Mapper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionParams {
    pub encoder: GruParams,
    /// Reverse-time encoder, present for bidirectional encoders.
    pub encoder_rev: Option<GruParams>,
    /// `(d_sh, encoder_width)`
    pub w_shared: Array2<f64>,
    /// `(d_pr, encoder_width)`
    pub w_private: Array2<f64>,
    /// `(H, d_sh + d_pr)`
    pub dec_in_w: Array2<f64>,
    pub dec_in_b: Array1<f64>,
    pub decoder: GruParams,
    /// `(C, H)`
    pub readout_w: Array2<f64>,
    pub readout_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpireParams {
    pub dims: ModelDims,
    pub regions: Vec<RegionParams>,
    pub aligners: Vec<AlignerParams>,
}

pub struct ParamRef<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub value: ArrayViewD<'a, f64>,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub value: ArrayViewMutD<'a, f64>,
}

fn uniform_matrix<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

fn uniform_vector<R: Rng>(len: usize, fan_in: usize, rng: &mut R) -> Array1<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array1::from_shape_simple_fn(len, || rng.random_range(-bound..bound))
}

impl RegionParams {
    fn zeros(dims: &ModelDims, channels: usize) -> Self {
        let h = dims.hidden;
        let w = dims.encoder_width();
        RegionParams {
            encoder: GruParams::zeros(channels, h),
            encoder_rev: match dims.encoder_direction {
                EncoderDirection::Forward => None,
                EncoderDirection::Bidirectional => Some(GruParams::zeros(channels, h)),
            },
            w_shared: Array2::zeros((dims.d_shared, w)),
            w_private: Array2::zeros((dims.d_private, w)),
            dec_in_w: Array2::zeros((h, dims.d_latent())),
            dec_in_b: Array1::zeros(h),
            decoder: GruParams::zeros(h, h),
            readout_w: Array2::zeros((channels, h)),
            readout_b: Array1::zeros(channels),
        }
    }

    fn init<R: Rng>(dims: &ModelDims, channels: usize, rng: &mut R) -> Self {
        let h = dims.hidden;
        let w = dims.encoder_width();
        let d_lat = dims.d_latent();
        RegionParams {
            encoder: GruParams::init(channels, h, rng),
            encoder_rev: match dims.encoder_direction {
                EncoderDirection::Forward => None,
                EncoderDirection::Bidirectional => Some(GruParams::init(channels, h, rng)),
            },
            w_shared: uniform_matrix(dims.d_shared, w, w, rng),
            w_private: uniform_matrix(dims.d_private, w, w, rng),
            dec_in_w: uniform_matrix(h, d_lat, d_lat, rng),
            dec_in_b: uniform_vector(h, d_lat, rng),
            decoder: GruParams::init(h, h, rng),
            readout_w: uniform_matrix(channels, h, h, rng),
            readout_b: uniform_vector(channels, h, rng),
        }
    }
}

impl SpireParams {
    /// Scaled-uniform recurrent and linear weights; identity mappers and
    /// centered-impulse aligner kernels.
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let regions = dims
            .channels
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                let mut rng = substream(seed, "init-region", r as u64);
                RegionParams::init(dims, c, &mut rng)
            })
            .collect();
        let aligners = dims
            .ordered_pairs()
            .into_iter()
            .map(|(s, t)| AlignerParams::identity(s, t, dims.d_shared, dims.conv_halfwidth))
            .collect();
        Ok(SpireParams {
            dims: dims.clone(),
            regions,
            aligners,
        })
    }

    /// All-zero parameters of matching shape; used as a gradient buffer.
    pub fn zeros(dims: &ModelDims) -> Self {
        SpireParams {
            dims: dims.clone(),
            regions: dims
                .channels
                .iter()
                .map(|&c| RegionParams::zeros(dims, c))
                .collect(),
            aligners: dims
                .ordered_pairs()
                .into_iter()
                .map(|(s, t)| {
                    AlignerParams::identity(s, t, dims.d_shared, dims.conv_halfwidth).zeros_like()
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims)
    }

    pub fn aligner(&self, source: usize, target: usize) -> Option<&AlignerParams> {
        self.aligners
            .iter()
            .find(|a| a.source == source && a.target == target)
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn tensors<'a>(&'a self) -> Vec<ParamRef<'a>> {
        let mut out = Vec::new();
        let mut push = |name: String, kind, value: ArrayViewD<'a, f64>| {
            out.push(ParamRef { name, kind, value })
        };
        for (r, p) in self.regions.iter().enumerate() {
            let grus = std::iter::once(("encoder", &p.encoder))
                .chain(p.encoder_rev.as_ref().map(|g| ("encoder_rev", g)));
            for (tag, g) in grus {
                push(format!("r{r}.{tag}.w_ih"), ParamKind::Encoder, g.w_ih.view().into_dyn());
                push(format!("r{r}.{tag}.w_hh"), ParamKind::Encoder, g.w_hh.view().into_dyn());
                push(format!("r{r}.{tag}.b_ih"), ParamKind::Encoder, g.b_ih.view().into_dyn());
                push(format!("r{r}.{tag}.b_hh"), ParamKind::Encoder, g.b_hh.view().into_dyn());
            }
            push(format!("r{r}.w_shared"), ParamKind::SharedProjection, p.w_shared.view().into_dyn());
            push(format!("r{r}.w_private"), ParamKind::PrivateProjection, p.w_private.view().into_dyn());
            push(format!("r{r}.dec_in_w"), ParamKind::DecoderInput, p.dec_in_w.view().into_dyn());
            push(format!("r{r}.dec_in_b"), ParamKind::DecoderInput, p.dec_in_b.view().into_dyn());
            push(format!("r{r}.decoder.w_ih"), ParamKind::Decoder, p.decoder.w_ih.view().into_dyn());
            push(format!("r{r}.decoder.w_hh"), ParamKind::Decoder, p.decoder.w_hh.view().into_dyn());
            push(format!("r{r}.decoder.b_ih"), ParamKind::Decoder, p.decoder.b_ih.view().into_dyn());
            push(format!("r{r}.decoder.b_hh"), ParamKind::Decoder, p.decoder.b_hh.view().into_dyn());
            push(format!("r{r}.readout_w"), ParamKind::Readout, p.readout_w.view().into_dyn());
            push(format!("r{r}.readout_b"), ParamKind::Readout, p.readout_b.view().into_dyn());
        }
        for a in &self.aligners {
            let (s, t) = (a.source, a.target);
            push(format!("a{s}to{t}.kernels"), ParamKind::AlignKernel, a.kernels.view().into_dyn());
            push(format!("a{s}to{t}.mapper"), ParamKind::Mapper, a.mapper.view().into_dyn());
        }
        out
    }

    /// Mutable counterpart of [`SpireParams::tensors`], same order.
    pub fn tensors_mut<'a>(&'a mut self) -> Vec<ParamMut<'a>> {
        let mut out = Vec::new();
        let mut push = |name: String, kind, value: ArrayViewMutD<'a, f64>| {
            out.push(ParamMut { name, kind, value })
        };
        for (r, p) in self.regions.iter_mut().enumerate() {
            let grus = std::iter::once(("encoder", &mut p.encoder))
                .chain(p.encoder_rev.as_mut().map(|g| ("encoder_rev", g)));
            for (tag, g) in grus {
                push(format!("r{r}.{tag}.w_ih"), ParamKind::Encoder, g.w_ih.view_mut().into_dyn());
                push(format!("r{r}.{tag}.w_hh"), ParamKind::Encoder, g.w_hh.view_mut().into_dyn());
                push(format!("r{r}.{tag}.b_ih"), ParamKind::Encoder, g.b_ih.view_mut().into_dyn());
                push(format!("r{r}.{tag}.b_hh"), ParamKind::Encoder, g.b_hh.view_mut().into_dyn());
            }
            push(format!("r{r}.w_shared"), ParamKind::SharedProjection, p.w_shared.view_mut().into_dyn());
            push(format!("r{r}.w_private"), ParamKind::PrivateProjection, p.w_private.view_mut().into_dyn());
            push(format!("r{r}.dec_in_w"), ParamKind::DecoderInput, p.dec_in_w.view_mut().into_dyn());
            push(format!("r{r}.dec_in_b"), ParamKind::DecoderInput, p.dec_in_b.view_mut().into_dyn());
            push(format!("r{r}.decoder.w_ih"), ParamKind::Decoder, p.decoder.w_ih.view_mut().into_dyn());
            push(format!("r{r}.decoder.w_hh"), ParamKind::Decoder, p.decoder.w_hh.view_mut().into_dyn());
            push(format!("r{r}.decoder.b_ih"), ParamKind::Decoder, p.decoder.b_ih.view_mut().into_dyn());
            push(format!("r{r}.decoder.b_hh"), ParamKind::Decoder, p.decoder.b_hh.view_mut().into_dyn());
            push(format!("r{r}.readout_w"), ParamKind::Readout, p.readout_w.view_mut().into_dyn());
            push(format!("r{r}.readout_b"), ParamKind::Readout, p.readout_b.view_mut().into_dyn());
        }
        for a in &mut self.aligners {
            let (s, t) = (a.source, a.target);
            push(format!("a{s}to{t}.kernels"), ParamKind::AlignKernel, a.kernels.view_mut().into_dyn());
            push(format!("a{s}to{t}.mapper"), ParamKind::Mapper, a.mapper.view_mut().into_dyn());
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.value.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.value.iter().all(|v| v.is_finite()))
    }

    /// Global L2 norm over every tensor.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.value.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for mut t in self.tensors_mut() {
            t.value.mapv_inplace(|v| v * factor);
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &SpireParams) {
        for (mut a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.value += &b.value;
        }
    }
}
