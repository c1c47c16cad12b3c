//! Forward composition and its reverse pass.
//!
//! All tensors here are time-major `(T, B, F)`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array3, ArrayView3, Axis, Zip};
use rand::Rng;

use super::align::{conv_align_backward, conv_align_map};
use super::gru::GruTrace;
use super::{EncoderDirection, RegionParams, SpireParams};
use crate::error::{Result, SpireError};
use crate::rng::SpireRng;

pub enum Mode<'a> {
    Eval,
    /// Dropout active, masks drawn from the given generator.
    Train(&'a mut SpireRng),
}

#[derive(Debug, Clone)]
pub struct EncodeTrace {
    forward: GruTrace,
    reverse: Option<GruTrace>,
    /// Encoder features after dropout, `(T, B, W)`.
    pub features: Array3<f64>,
    mask: Option<Array3<f64>>,
}

#[derive(Debug, Clone)]
pub struct DecodeTrace {
    /// Decoder input `[z_sh, gate * z_pr]`, `(T, B, d_sh + d_pr)`.
    pub input: Array3<f64>,
    pub hidden_in: Array3<f64>,
    gru: GruTrace,
    pub x_hat: Array3<f64>,
}

#[derive(Debug, Clone)]
pub struct RegionForward {
    pub z_shared: Array3<f64>,
    /// Ungated private latents.
    pub z_private: Array3<f64>,
    pub encode: EncodeTrace,
    /// Decoded from `[z_sh, alpha_p z_pr]`.
    pub full: DecodeTrace,
    /// Decoded from own shared latents only.
    pub self_only: DecodeTrace,
}

#[derive(Debug, Clone)]
pub struct PairForward {
    pub source: usize,
    pub target: usize,
    pub conv_out: Array3<f64>,
    /// Source shared latents aligned and mapped into the target's space.
    pub z_tilde: Array3<f64>,
    /// Target reconstructed from `z_tilde` alone.
    pub cross: DecodeTrace,
}

#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    pub alpha_p: f64,
    pub regions: Vec<RegionForward>,
    pub pairs: Vec<PairForward>,
}

impl ForwardOutputs {
    pub fn seq_len(&self) -> usize {
        self.regions[0].z_shared.dim().0
    }

    pub fn batch(&self) -> usize {
        self.regions[0].z_shared.dim().1
    }
}

/// Upstream gradients for every differentiable output. `None` is zero.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub z_shared: Vec<Option<Array3<f64>>>,
    /// Gradient with respect to the ungated private latents.
    pub z_private: Vec<Option<Array3<f64>>>,
    pub full: Vec<Option<Array3<f64>>>,
    pub self_only: Vec<Option<Array3<f64>>>,
    pub z_tilde: Vec<Option<Array3<f64>>>,
    pub cross: Vec<Option<Array3<f64>>>,
}

impl OutputGrads {
    pub fn empty(regions: usize, pairs: usize) -> Self {
        OutputGrads {
            z_shared: vec![None; regions],
            z_private: vec![None; regions],
            full: vec![None; regions],
            self_only: vec![None; regions],
            z_tilde: vec![None; pairs],
            cross: vec![None; pairs],
        }
    }
}

/// Adds `scale * g` into an optional accumulator slot.
pub fn accumulate(slot: &mut Option<Array3<f64>>, g: ArrayView3<f64>, scale: f64) {
    match slot {
        Some(acc) => acc.scaled_add(scale, &g),
        None => *slot = Some(g.mapv(|v| v * scale)),
    }
}

fn linear_time(x: ArrayView3<f64>, w: &ndarray::Array2<f64>) -> Array3<f64> {
    let (t, b, f) = x.dim();
    let x2 = x.to_shape((t * b, f)).unwrap();
    let mut y = x2.dot(&w.t());
    if !y.is_standard_layout() {
        y = y.as_standard_layout().into_owned();
    }
    y.into_shape_with_order((t, b, w.nrows())).unwrap()
}

fn reversed(x: ArrayView3<f64>) -> Array3<f64> {
    x.slice(s![..;-1, .., ..]).as_standard_layout().into_owned()
}

/// Runs the encoder and projects onto the shared and private latents.
pub fn encode(
    p: &RegionParams,
    x: ArrayView3<f64>,
    dropout: f64,
    mode: Mode<'_>,
) -> Result<(Array3<f64>, Array3<f64>, EncodeTrace)> {
    if x.dim().2 != p.encoder.input_size() {
        return Err(SpireError::shape(format!(
            "encoder expects {} channels, got {}",
            p.encoder.input_size(),
            x.dim().2
        )));
    }
    let x = x.as_standard_layout();
    let fwd = p.encoder.forward(x.view());
    let rev = p
        .encoder_rev
        .as_ref()
        .map(|g| g.forward(reversed(x.view()).view()));
    let mut features = match &rev {
        None => fwd.outputs().to_owned(),
        Some(rt) => {
            let back = reversed(rt.outputs());
            ndarray::concatenate(Axis(2), &[fwd.outputs(), back.view()])
                .unwrap()
                .as_standard_layout()
                .into_owned()
        }
    };
    let mask = match mode {
        Mode::Train(rng) if dropout > 0.0 => {
            let keep = 1.0 - dropout;
            let m = Array3::from_shape_simple_fn(features.raw_dim(), || {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            features *= &m;
            Some(m)
        }
        _ => None,
    };
    let z_sh = linear_time(features.view(), &p.w_shared);
    let z_pr = linear_time(features.view(), &p.w_private);
    Ok((
        z_sh,
        z_pr,
        EncodeTrace {
            forward: fwd,
            reverse: rev,
            features,
            mask,
        },
    ))
}

/// Decodes `[z_sh, alpha_p * z_pr]`; `z_pr = None` decodes from shared
/// latents alone, identical to `alpha_p = 0`.
pub fn decode(
    p: &RegionParams,
    z_sh: ArrayView3<f64>,
    z_pr: Option<ArrayView3<f64>>,
    alpha_p: f64,
) -> Result<DecodeTrace> {
    let (t_len, batch, d_sh) = z_sh.dim();
    let d_lat = p.dec_in_w.ncols();
    if d_sh > d_lat {
        return Err(SpireError::shape(format!(
            "decoder takes {d_lat} latent inputs, got {d_sh} shared"
        )));
    }
    if !(0.0..=1.0).contains(&alpha_p) {
        return Err(SpireError::Argument(format!("private gate {alpha_p} outside [0, 1]")));
    }
    let mut input = Array3::zeros((t_len, batch, d_lat));
    input.slice_mut(s![.., .., ..d_sh]).assign(&z_sh);
    if let Some(zp) = z_pr {
        if zp.dim() != (t_len, batch, d_lat - d_sh) {
            return Err(SpireError::shape(format!(
                "private latents {:?} do not fit decoder input of width {d_lat}",
                zp.dim()
            )));
        }
        if alpha_p != 0.0 {
            let mut dst = input.slice_mut(s![.., .., d_sh..]);
            Zip::from(&mut dst).and(&zp).for_each(|d, &v| *d = alpha_p * v);
        }
    }
    let mut hidden_in = linear_time(input.view(), &p.dec_in_w);
    hidden_in += &p.dec_in_b;
    let gru = p.decoder.forward(hidden_in.view());
    let mut x_hat = linear_time(gru.outputs(), &p.readout_w);
    x_hat += &p.readout_b;
    Ok(DecodeTrace {
        input,
        hidden_in,
        gru,
        x_hat,
    })
}

fn decode_backward(
    p: &RegionParams,
    trace: &DecodeTrace,
    d_xhat: ArrayView3<f64>,
    grads: &mut RegionParams,
) -> Array3<f64> {
    let (t_len, batch, c) = d_xhat.dim();
    let h = p.decoder.hidden_size();
    let rows = t_len * batch;
    let d2 = d_xhat.to_shape((rows, c)).unwrap();
    let outs = trace.gru.outputs();
    let g2 = outs.to_shape((rows, h)).unwrap();
    general_mat_mul(1.0, &d2.t(), &g2, 1.0, &mut grads.readout_w);
    Zip::from(&mut grads.readout_b)
        .and(d2.columns())
        .for_each(|g, col| *g += col.sum());
    let dg = d2
        .dot(&p.readout_w)
        .into_shape_with_order((t_len, batch, h))
        .unwrap();
    let dv = p
        .decoder
        .backward(trace.hidden_in.view(), &trace.gru, dg.view(), &mut grads.decoder, true)
        .expect("input gradient requested");
    let d_lat = p.dec_in_w.ncols();
    let dv2 = dv.to_shape((rows, h)).unwrap();
    let u2 = trace.input.to_shape((rows, d_lat)).unwrap();
    general_mat_mul(1.0, &dv2.t(), &u2, 1.0, &mut grads.dec_in_w);
    Zip::from(&mut grads.dec_in_b)
        .and(dv2.columns())
        .for_each(|g, col| *g += col.sum());
    dv2.dot(&p.dec_in_w)
        .into_shape_with_order((t_len, batch, d_lat))
        .unwrap()
}

fn encode_backward(
    p: &RegionParams,
    x: ArrayView3<f64>,
    trace: &EncodeTrace,
    d_sh: Option<&Array3<f64>>,
    d_pr: Option<&Array3<f64>>,
    grads: &mut RegionParams,
) {
    let (t_len, batch, width) = trace.features.dim();
    let rows = t_len * batch;
    let f2 = trace.features.to_shape((rows, width)).unwrap();
    let mut d_feat = ndarray::Array2::<f64>::zeros((rows, width));
    for (d, w, gw) in [
        (d_sh, &p.w_shared, &mut grads.w_shared),
        (d_pr, &p.w_private, &mut grads.w_private),
    ] {
        if let Some(d) = d {
            let d2 = d.to_shape((rows, w.nrows())).unwrap();
            general_mat_mul(1.0, &d2.t(), &f2, 1.0, gw);
            general_mat_mul(1.0, &d2, w, 1.0, &mut d_feat);
        }
    }
    let mut d_feat = d_feat.into_shape_with_order((t_len, batch, width)).unwrap();
    if let Some(m) = &trace.mask {
        d_feat *= m;
    }
    let h = p.encoder.hidden_size();
    let x = x.as_standard_layout();
    p.encoder.backward(
        x.view(),
        &trace.forward,
        d_feat.slice(s![.., .., ..h]),
        &mut grads.encoder,
        false,
    );
    if let (Some(rev), Some(rt), Some(gr)) = (&p.encoder_rev, &trace.reverse, &mut grads.encoder_rev) {
        let d_back = reversed(d_feat.slice(s![.., .., h..]));
        rev.backward(reversed(x.view()).view(), rt, d_back.view(), gr, false);
    }
}

/// Encodes every region, aligns every ordered pair, and produces the full,
/// self, and cross reconstructions.
pub fn forward(
    params: &SpireParams,
    inputs: &[Array3<f64>],
    alpha_p: f64,
    mut mode: Mode<'_>,
) -> Result<ForwardOutputs> {
    let dims = &params.dims;
    if inputs.len() != dims.regions() {
        return Err(SpireError::shape(format!(
            "model has {} regions, batch has {}",
            dims.regions(),
            inputs.len()
        )));
    }
    let (t_len, batch, _) = inputs[0].dim();
    if inputs.iter().any(|x| x.dim().0 != t_len || x.dim().1 != batch) {
        return Err(SpireError::shape("regions disagree on time length or batch size"));
    }
    debug_assert!(dims.encoder_direction != EncoderDirection::Bidirectional
        || params.regions.iter().all(|r| r.encoder_rev.is_some()));

    let mut encoded = Vec::with_capacity(inputs.len());
    for (p, x) in params.regions.iter().zip(inputs) {
        let m = match &mut mode {
            Mode::Eval => Mode::Eval,
            Mode::Train(rng) => Mode::Train(rng),
        };
        encoded.push(encode(p, x.view(), dims.dropout, m)?);
    }

    let mut pairs = Vec::with_capacity(params.aligners.len());
    for a in &params.aligners {
        let (conv_out, z_tilde) = conv_align_map(a, encoded[a.source].0.view())?;
        let cross = decode(&params.regions[a.target], z_tilde.view(), None, 0.0)?;
        pairs.push(PairForward {
            source: a.source,
            target: a.target,
            conv_out,
            z_tilde,
            cross,
        });
    }

    let mut regions = Vec::with_capacity(inputs.len());
    for (p, (z_sh, z_pr, enc)) in params.regions.iter().zip(encoded) {
        let full = decode(p, z_sh.view(), Some(z_pr.view()), alpha_p)?;
        let self_only = if alpha_p == 0.0 {
            full.clone()
        } else {
            decode(p, z_sh.view(), None, 0.0)?
        };
        regions.push(RegionForward {
            z_shared: z_sh,
            z_private: z_pr,
            encode: enc,
            full,
            self_only,
        });
    }

    Ok(ForwardOutputs {
        alpha_p,
        regions,
        pairs,
    })
}

/// Reverse pass from output gradients to parameter gradients.
pub fn backward(
    params: &SpireParams,
    inputs: &[Array3<f64>],
    out: &ForwardOutputs,
    mut g: OutputGrads,
) -> SpireParams {
    let mut grads = params.zeros_like();
    let d_sh = params.dims.d_shared;

    for (r, rf) in out.regions.iter().enumerate() {
        let p = &params.regions[r];
        if let Some(d) = g.full[r].take() {
            let du = decode_backward(p, &rf.full, d.view(), &mut grads.regions[r]);
            accumulate(&mut g.z_shared[r], du.slice(s![.., .., ..d_sh]), 1.0);
            if out.alpha_p != 0.0 {
                accumulate(&mut g.z_private[r], du.slice(s![.., .., d_sh..]), out.alpha_p);
            }
        }
        if let Some(d) = g.self_only[r].take() {
            let du = decode_backward(p, &rf.self_only, d.view(), &mut grads.regions[r]);
            accumulate(&mut g.z_shared[r], du.slice(s![.., .., ..d_sh]), 1.0);
        }
    }

    for (k, pf) in out.pairs.iter().enumerate() {
        let mut d_tilde = g.z_tilde[k].take();
        if let Some(d) = g.cross[k].take() {
            let p = &params.regions[pf.target];
            let du = decode_backward(p, &pf.cross, d.view(), &mut grads.regions[pf.target]);
            accumulate(&mut d_tilde, du.slice(s![.., .., ..d_sh]), 1.0);
        }
        if let Some(d) = d_tilde {
            let dz = conv_align_backward(
                &params.aligners[k],
                out.regions[pf.source].z_shared.view(),
                pf.conv_out.view(),
                d.view(),
                &mut grads.aligners[k],
            );
            accumulate(&mut g.z_shared[pf.source], dz.view(), 1.0);
        }
    }

    for (r, rf) in out.regions.iter().enumerate() {
        let dsh = g.z_shared[r].take();
        let dpr = g.z_private[r].take();
        if dsh.is_none() && dpr.is_none() {
            continue;
        }
        encode_backward(
            &params.regions[r],
            inputs[r].view(),
            &rf.encode,
            dsh.as_ref(),
            dpr.as_ref(),
            &mut grads.regions[r],
        );
    }
    grads
}
