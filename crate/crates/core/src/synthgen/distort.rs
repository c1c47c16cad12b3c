use std::f64::consts::PI;

use ndarray::{Array1, Array3, Axis};
use rand::Rng;

use super::{validate_delay, LatentBundle, WarpDescriptor, WarpKind};
use crate::error::{Result, SpireError};
use crate::rng::substream;

const MONOTONE_EXPONENT: (f64, f64) = (0.6, 1.6);

fn warp_value(kind: WarpKind, param: f64, z: f64) -> f64 {
    match kind {
        WarpKind::None => z,
        WarpKind::Monotone => z.signum() * z.abs().powf(param),
        WarpKind::Cubic => z + param * z * z * z,
    }
}

/// Warps the shared latents of every region after the first. Monotone
/// exponents are drawn per region and dimension from the seed.
pub fn apply_region_warp(
    latents: &LatentBundle,
    kind: WarpKind,
    cubic_coefficient: f64,
    seed: u64,
) -> Result<LatentBundle> {
    if kind == WarpKind::Cubic && !(cubic_coefficient >= 0.0) {
        // negative coefficients break monotonicity for |z| > 1/sqrt(3|c|)
        return Err(SpireError::config("cubic_coefficient", "must be ≥ 0"));
    }
    let mut out = latents.clone();
    let d = latents.shared[0].len_of(Axis(2));
    for r in 1..latents.n_regions() {
        let params: Vec<f64> = match kind {
            WarpKind::None => Vec::new(),
            WarpKind::Monotone => {
                let mut rng = substream(seed, "warp", r as u64);
                (0..d)
                    .map(|_| rng.random_range(MONOTONE_EXPONENT.0..MONOTONE_EXPONENT.1))
                    .collect()
            }
            WarpKind::Cubic => vec![cubic_coefficient; d],
        };
        if kind != WarpKind::None {
            for (k, mut col) in out.shared[r].axis_iter_mut(Axis(2)).enumerate() {
                col.mapv_inplace(|z| warp_value(kind, params[k], z));
            }
        }
        out.warp[r] = WarpDescriptor { kind, params };
    }
    Ok(out)
}

pub fn sinusoidal_lag(t_len: usize, amplitude: f64, period: f64) -> Array1<f64> {
    Array1::from_shape_fn(t_len, |t| amplitude * (2.0 * PI * t as f64 / period).sin())
}

fn shift_series(src: ndarray::ArrayView1<f64>, lag: &Array1<f64>) -> Array1<f64> {
    let t_len = src.len();
    let last = (t_len - 1) as f64;
    Array1::from_shape_fn(t_len, |t| {
        let pos = (t as f64 - lag[t]).clamp(0.0, last);
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        if i0 + 1 >= t_len || frac == 0.0 {
            src[i0]
        } else {
            src[i0] * (1.0 - frac) + src[i0 + 1] * frac
        }
    })
}

/// Replaces the shared latents of every region after the first by the first
/// region's latents read at `t − lag[t]` (linear interpolation, clamped at
/// the edges), then re-applies each region's recorded warp.
pub fn apply_delay_profile(latents: &LatentBundle, lag: &Array1<f64>) -> Result<LatentBundle> {
    let (n, t_len, d) = latents.shared[0].dim();
    if lag.len() != t_len {
        return Err(SpireError::shape(format!(
            "delay profile has {} samples, latents have {t_len}",
            lag.len()
        )));
    }
    let mut out = latents.clone();
    for r in 1..latents.n_regions() {
        let mut shifted = Array3::zeros((n, t_len, d));
        for trial in 0..n {
            for k in 0..d {
                let src = latents.shared[0].slice(ndarray::s![trial, .., k]);
                shifted.slice_mut(ndarray::s![trial, .., k]).assign(&shift_series(src, lag));
            }
        }
        let w = &latents.warp[r];
        if w.kind != WarpKind::None {
            for (k, mut col) in shifted.axis_iter_mut(Axis(2)).enumerate() {
                let p = w.params[k];
                col.mapv_inplace(|z| warp_value(w.kind, p, z));
            }
        }
        out.shared[r] = shifted;
    }
    out.delay_profile = Some(lag.clone());
    Ok(out)
}

/// Sinusoidal lag `amplitude·sin(2πt/period)` applied through
/// [`apply_delay_profile`].
pub fn apply_time_varying_delay(latents: &LatentBundle, amplitude: f64, period: f64) -> Result<LatentBundle> {
    let t_len = latents.t_len();
    validate_delay(amplitude, period, t_len)?;
    if amplitude == 0.0 {
        let mut out = latents.clone();
        out.delay_profile = Some(Array1::zeros(t_len));
        return Ok(out);
    }
    apply_delay_profile(latents, &sinusoidal_lag(t_len, amplitude, period))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_latents, preset_config, Preset};
    use ndarray::Array2;

    fn bundle() -> LatentBundle {
        let mut cfg = preset_config(Preset::D0, 1);
        cfg.n_trials = 4;
        generate_latents(&cfg, 1).unwrap()
    }

    fn ranks(x: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
        let mut r = vec![0; x.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank;
        }
        r
    }

    #[test]
    fn no_warp_is_identity() {
        let b = bundle();
        let w = apply_region_warp(&b, WarpKind::None, 0.3, 0).unwrap();
        assert_eq!(w.shared, b.shared);
    }

    #[test]
    fn monotone_warp_preserves_rank_order() {
        let b = bundle();
        let w = apply_region_warp(&b, WarpKind::Monotone, 0.3, 9).unwrap();
        assert_eq!(w.shared[0], b.shared[0]);
        assert_ne!(w.shared[1], b.shared[1]);
        for trial in 0..4 {
            for k in 0..3 {
                let a: Vec<f64> = w.shared[0].slice(ndarray::s![trial, .., k]).to_vec();
                let c: Vec<f64> = w.shared[1].slice(ndarray::s![trial, .., k]).to_vec();
                assert_eq!(ranks(&a), ranks(&c));
            }
        }
        assert!(w.warp[1].params.iter().all(|p| (0.6..1.6).contains(p)));
    }

    #[test]
    fn cubic_hand_values() {
        let mut b = bundle();
        for s in b.shared.iter_mut() {
            *s = Array3::from_shape_vec((1, 3, 1), vec![-1.0, 0.0, 1.0]).unwrap();
        }
        let w = apply_region_warp(&b, WarpKind::Cubic, 0.3, 0).unwrap();
        let got: Vec<f64> = w.shared[1].iter().copied().collect();
        for (g, e) in got.iter().zip([-1.3, 0.0, 1.3]) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let b = bundle();
        let d = apply_time_varying_delay(&b, 0.0, 250.0).unwrap();
        assert_eq!(d.shared, b.shared);
    }

    #[test]
    fn amplitude_limit() {
        let b = bundle();
        assert!(apply_time_varying_delay(&b, 62.5, 250.0).is_err());
        assert!(apply_time_varying_delay(&b, 3.0, 0.0).is_err());
    }

    #[test]
    fn constant_integer_lag_on_ramp() {
        let mut b = bundle();
        let ramp = Array2::from_shape_fn((20, 1), |(t, _)| t as f64);
        for s in b.shared.iter_mut() {
            *s = ramp.clone().insert_axis(Axis(0));
        }
        let d = apply_delay_profile(&b, &Array1::from_elem(20, 2.0)).unwrap();
        for t in 2..20 {
            assert_eq!(d.shared[1][[0, t, 0]], (t - 2) as f64);
        }
        // fractional lag interpolates linearly, edges clamp
        let d = apply_delay_profile(&b, &Array1::from_elem(20, 0.5)).unwrap();
        assert_eq!(d.shared[1][[0, 5, 0]], 4.5);
        assert_eq!(d.shared[1][[0, 0, 0]], 0.0);
    }

    #[test]
    fn delay_profile_peak() {
        let lag = sinusoidal_lag(250, 3.0, 250.0);
        let peak = lag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 3.0).abs() < 1e-3);
    }
}
