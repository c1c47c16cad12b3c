//! Shared helpers for integration tests: tiny model fixtures, finite
//! differences, and naive-loop loss oracles that share no code with the
//! library's vectorised implementations.

#![allow(dead_code)]

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spire_core::losses::{loss_and_grads, total_loss, LossWeights, VicregCoefficients};
use spire_core::model::{forward, EncoderDirection, Mode, ModelDims, SpireParams};

pub fn tiny_dims() -> ModelDims {
    ModelDims {
        channels: vec![3, 3],
        hidden: 4,
        d_shared: 2,
        d_private: 2,
        conv_halfwidth: 1,
        dropout: 0.0,
        encoder_direction: EncoderDirection::Forward,
    }
}

pub fn random_inputs(dims: &ModelDims, t: usize, b: usize, seed: u64) -> Vec<Array3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dims.channels
        .iter()
        .map(|&c| Array3::from_shape_simple_fn((t, b, c), || rng.random_range(-1.5..1.5)))
        .collect()
}

/// Perturbs initial parameters so aligners and mappers sit away from the
/// identity and every regulariser has a non-trivial gradient.
pub fn perturbed_params(dims: &ModelDims, seed: u64) -> SpireParams {
    let mut p = SpireParams::init(dims, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for a in &mut p.aligners {
        a.kernels.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
        a.mapper.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
    }
    for r in &mut p.regions {
        r.w_shared.mapv_inplace(|v| 3.0 * v);
        r.w_private.mapv_inplace(|v| 2.0 * v);
    }
    p
}

pub fn all_weights() -> LossWeights {
    LossWeights {
        rec: 1.0,
        cross: 0.3,
        self_recon: 0.2,
        align: 0.5,
        orth: 0.1,
        mapid: 0.05,
        align_reg: 0.02,
        var_sh: 0.2,
        var_pr: 0.3,
        tau: 0.6,
        vicreg: VicregCoefficients::default(),
    }
}

pub fn objective(p: &SpireParams, x: &[Array3<f64>], alpha: f64, w: &LossWeights) -> f64 {
    let out = forward(p, x, alpha, Mode::Eval).unwrap();
    total_loss(p, x, &out, w).unwrap().total
}

/// Per-tensor relative error `‖analytic − fd‖ / max(‖fd‖, floor)` using
/// central differences on every scalar.
pub fn gradient_check(
    p: &SpireParams,
    x: &[Array3<f64>],
    alpha: f64,
    w: &LossWeights,
    eps: f64,
) -> Vec<(String, f64)> {
    let out = forward(p, x, alpha, Mode::Eval).unwrap();
    let (_, grads) = loss_and_grads(p, x, &out, w).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.value.iter().copied().collect()))
        .collect();
    let mut report = Vec::new();
    for (ti, (name, g)) in analytic.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut fd2 = 0.0;
        for k in 0..g.len() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            {
                let mut tp = plus.tensors_mut();
                let v = tp[ti].value.as_slice_mut().unwrap();
                v[k] += eps;
            }
            {
                let mut tm = minus.tensors_mut();
                let v = tm[ti].value.as_slice_mut().unwrap();
                v[k] -= eps;
            }
            let fd = (objective(&plus, x, alpha, w) - objective(&minus, x, alpha, w)) / (2.0 * eps);
            diff2 += (fd - g[k]).powi(2);
            fd2 += fd * fd;
        }
        report.push((name.clone(), diff2.sqrt() / fd2.sqrt().max(1e-8)));
    }
    report
}

// ----- naive oracles --------------------------------------------------------

pub fn naive_mse(x: &Array3<f64>, y: &Array3<f64>) -> f64 {
    let (a, b, c) = x.dim();
    let mut s = 0.0;
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let d = x[[i, j, k]] - y[[i, j, k]];
                s += d * d;
            }
        }
    }
    s / (a * b * c) as f64
}

fn col_mean(z: &Array2<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..z.nrows() {
        s += z[[i, j]];
    }
    s / z.nrows() as f64
}

fn naive_cov(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
    let (ma, mb) = (col_mean(a, i), col_mean(b, j));
    let mut s = 0.0;
    for n in 0..a.nrows() {
        s += (a[[n, i]] - ma) * (b[[n, j]] - mb);
    }
    s / (a.nrows() - 1) as f64
}

pub fn naive_vicreg(a: &Array2<f64>, b: &Array2<f64>, c: &VicregCoefficients) -> f64 {
    let (n, d) = a.dim();
    let mut inv = 0.0;
    for i in 0..n {
        for j in 0..d {
            inv += (a[[i, j]] - b[[i, j]]).powi(2);
        }
    }
    inv /= (n * d) as f64;
    let mut var = 0.0;
    let mut cov = 0.0;
    for z in [a, b] {
        let mut v = 0.0;
        for j in 0..d {
            let s = (naive_cov(z, j, z, j) + 1e-4).sqrt();
            v += (1.0 - s).max(0.0);
        }
        var += 0.5 * v / d as f64;
        let mut cc = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    cc += naive_cov(z, i, z, j).powi(2);
                }
            }
        }
        cov += 0.5 * cc / d as f64;
    }
    c.invariance * inv + c.variance * var + c.covariance * cov
}

pub fn naive_orth(sh: &Array2<f64>, pr: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..sh.ncols() {
        for j in 0..pr.ncols() {
            let si = naive_cov(sh, i, sh, i).sqrt().max(1e-8);
            let sj = naive_cov(pr, j, pr, j).sqrt().max(1e-8);
            s += (naive_cov(sh, i, pr, j) / (si * sj)).powi(2);
        }
    }
    s
}

pub fn naive_var_guards(sh: &Array2<f64>, pr: &Array2<f64>, tau: f64) -> (f64, f64) {
    let mut a = 0.0;
    for j in 0..sh.ncols() {
        a += (naive_cov(sh, j, sh, j).sqrt() - 1.0).powi(2);
    }
    let mut b = 0.0;
    for j in 0..pr.ncols() {
        b += (tau - naive_cov(pr, j, pr, j).sqrt()).max(0.0).powi(2);
    }
    (a, b)
}

pub fn naive_mapid(m: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let t = if i == j { 1.0 } else { 0.0 };
            s += (m[[i, j]] - t).powi(2);
        }
    }
    s
}

pub fn naive_align_reg(k: &Array2<f64>) -> f64 {
    let half = k.ncols() / 2;
    let mut s = 0.0;
    for j in 0..k.nrows() {
        let mut sum = 0.0;
        for m in 0..k.ncols() {
            let d = if m == half { 1.0 } else { 0.0 };
            s += (k[[j, m]] - d).powi(2);
            sum += k[[j, m]];
        }
        s += (sum - 1.0).powi(2);
    }
    s
}

pub fn flatten(z: &Array3<f64>) -> Array2<f64> {
    let (t, b, d) = z.dim();
    let mut out = Array2::zeros((t * b, d));
    for i in 0..t {
        for j in 0..b {
            for k in 0..d {
                out[[i * b + j, k]] = z[[i, j, k]];
            }
        }
    }
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}
