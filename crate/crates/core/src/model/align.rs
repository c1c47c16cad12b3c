//! Cross-region temporal aligner: depthwise convolution over time followed
//! by a linear map between shared subspaces.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{Result, SpireError};

#[derive(Debug, Clone, PartialEq)]
pub struct AlignerParams {
    pub source: usize,
    pub target: usize,
    /// One filter per shared dimension, `(d_sh, 2K + 1)`. Tap `m` shifts
    /// the input by `m - K` samples.
    pub kernels: Array2<f64>,
    /// `(d_sh, d_sh)`; applied as `z_tilde = M y`.
    pub mapper: Array2<f64>,
}

impl AlignerParams {
    /// Centered impulse kernels and an identity mapper.
    pub fn identity(source: usize, target: usize, d_shared: usize, halfwidth: usize) -> Self {
        let mut kernels = Array2::zeros((d_shared, 2 * halfwidth + 1));
        kernels.column_mut(halfwidth).fill(1.0);
        AlignerParams {
            source,
            target,
            kernels,
            mapper: Array2::eye(d_shared),
        }
    }

    pub fn halfwidth(&self) -> usize {
        self.kernels.ncols() / 2
    }

    pub fn zeros_like(&self) -> Self {
        AlignerParams {
            source: self.source,
            target: self.target,
            kernels: Array2::zeros(self.kernels.raw_dim()),
            mapper: Array2::zeros(self.mapper.raw_dim()),
        }
    }
}

/// Same-length depthwise convolution with zero padding on `(T, B, d)` input.
pub fn depthwise_conv(kernels: ArrayView2<f64>, z: ArrayView3<f64>) -> Result<Array3<f64>> {
    let (t_len, batch, dims) = z.dim();
    if kernels.nrows() != dims {
        return Err(SpireError::shape(format!(
            "aligner has {} kernels but input has {dims} shared dimensions",
            kernels.nrows()
        )));
    }
    if kernels.ncols() % 2 == 0 {
        return Err(SpireError::shape(format!(
            "kernel length {} must be odd",
            kernels.ncols()
        )));
    }
    let half = (kernels.ncols() / 2) as isize;
    let mut y = Array3::zeros((t_len, batch, dims));
    for t in 0..t_len as isize {
        for (m, col) in kernels.columns().into_iter().enumerate() {
            let src = t - (m as isize - half);
            if src < 0 || src >= t_len as isize {
                continue;
            }
            for b in 0..batch {
                for j in 0..dims {
                    let k = col[j];
                    if k != 0.0 {
                        y[[t as usize, b, j]] += k * z[[src as usize, b, j]];
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Applies `mapper` to every time step: `out[t, b, :] = M z[t, b, :]`.
pub fn apply_mapper(mapper: ArrayView2<f64>, y: ArrayView3<f64>) -> Result<Array3<f64>> {
    let (t_len, batch, dims) = y.dim();
    if mapper.nrows() != dims || mapper.ncols() != dims {
        return Err(SpireError::shape(format!(
            "mapper {:?} does not match shared dimension {dims}",
            mapper.dim()
        )));
    }
    let y2 = y.to_shape((t_len * batch, dims)).unwrap();
    Ok(y2
        .dot(&mapper.t())
        .into_shape_with_order((t_len, batch, dims))
        .unwrap())
}

/// `z_tilde = M · ConvAlign(z)`. Returns the convolution output too, which
/// the backward pass needs.
pub fn conv_align_map(
    aligner: &AlignerParams,
    z_shared: ArrayView3<f64>,
) -> Result<(Array3<f64>, Array3<f64>)> {
    let y = depthwise_conv(aligner.kernels.view(), z_shared)?;
    let out = apply_mapper(aligner.mapper.view(), y.view())?;
    Ok((y, out))
}

/// Backward pass of [`conv_align_map`]. Accumulates kernel and mapper
/// gradients and returns the gradient with respect to the source latents.
pub fn conv_align_backward(
    aligner: &AlignerParams,
    z_shared: ArrayView3<f64>,
    conv_out: ArrayView3<f64>,
    d_out: ArrayView3<f64>,
    grads: &mut AlignerParams,
) -> Array3<f64> {
    let (t_len, batch, dims) = z_shared.dim();
    let rows = t_len * batch;
    let d2 = d_out.to_shape((rows, dims)).unwrap();
    let y2 = conv_out.to_shape((rows, dims)).unwrap();
    general_mat_mul(1.0, &d2.t(), &y2, 1.0, &mut grads.mapper);
    let dy = d2.dot(&aligner.mapper);
    let dy = dy.into_shape_with_order((t_len, batch, dims)).unwrap();

    let half = aligner.halfwidth() as isize;
    let mut dz = Array3::zeros((t_len, batch, dims));
    for t in 0..t_len as isize {
        for m in 0..aligner.kernels.ncols() {
            let src = t - (m as isize - half);
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let (t, src) = (t as usize, src as usize);
            for b in 0..batch {
                for j in 0..dims {
                    let g = dy[[t, b, j]];
                    grads.kernels[[j, m]] += g * z_shared[[src, b, j]];
                    dz[[src, b, j]] += aligner.kernels[[j, m]] * g;
                }
            }
        }
    }
    dz
}
