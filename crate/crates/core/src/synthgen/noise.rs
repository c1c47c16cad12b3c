use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};

use super::{ElectrodeGeometry, NoiseConfig};
use crate::error::{Result, SpireError};
use crate::rng::{substream, SpireRng};

fn normal(rng: &mut SpireRng) -> f64 {
    rng.sample(StandardNormal)
}

fn unit_std(mut x: Array1<f64>) -> Array1<f64> {
    let m = x.mean().unwrap_or(0.0);
    x -= m;
    let sd = x.mapv(|v| v * v).mean().unwrap_or(0.0).sqrt();
    if sd > 0.0 {
        x /= sd;
    }
    x
}

/// Zero-mean, unit-variance noise with power spectrum ∝ 1/f, made by
/// shaping white noise in the frequency domain.
pub fn pink_noise(t_len: usize, planner: &mut FftPlanner<f64>, rng: &mut SpireRng) -> Array1<f64> {
    let mut buf: Vec<Complex<f64>> = (0..t_len).map(|_| Complex::new(normal(rng), 0.0)).collect();
    planner.plan_fft_forward(t_len).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        let f = k.min(t_len - k) as f64;
        *v /= f.sqrt();
    }
    planner.plan_fft_inverse(t_len).process(&mut buf);
    unit_std(buf.iter().map(|c| c.re).collect())
}

fn random_walk(t_len: usize, rng: &mut SpireRng) -> Array1<f64> {
    let mut acc = 0.0;
    unit_std(
        (0..t_len)
            .map(|_| {
                acc += normal(rng);
                acc
            })
            .collect(),
    )
}

/// Adds 1/f, heteroscedastic, row-drift, common-mode and Gaussian-floor
/// noise to clean contact signals `(n_trials, T, contacts)`. Amplitudes are
/// relative to the standard deviation of the clean input. `region` selects
/// independent streams per region.
pub fn add_structured_noise(
    signals: &Array3<f64>,
    geometry: &ElectrodeGeometry,
    cfg: &NoiseConfig,
    seed: u64,
    region: usize,
) -> Result<Array3<f64>> {
    cfg.validate()?;
    let (n, t_len, c) = signals.dim();
    if c != geometry.contacts() {
        return Err(SpireError::Geometry(format!(
            "signals have {c} contacts, geometry `{}` expects {}",
            geometry.name,
            geometry.contacts()
        )));
    }
    let mut out = signals.clone();
    let mean = signals.mean().unwrap_or(0.0);
    let sig_std = signals.mapv(|v| (v - mean).powi(2)).mean().unwrap_or(0.0).sqrt();
    let sig_std = if sig_std > 0.0 { sig_std } else { 1.0 };
    let tag = |kind: &str| format!("noise-{kind}-{region}");
    let mut planner = FftPlanner::new();

    let loadings = (cfg.common_mode_rank > 0 && cfg.common_mode_scale > 0.0).then(|| {
        let mut rng = substream(seed, &tag("cm-loadings"), 0);
        Array2::from_shape_fn((c, cfg.common_mode_rank), |_| 1.0 + 0.5 * normal(&mut rng))
    });

    for trial in 0..n {
        let clean = signals.index_axis(Axis(0), trial);
        let mut x = out.index_axis_mut(Axis(0), trial);
        let tr = trial as u64;

        if cfg.one_over_f_scale > 0.0 {
            let mut rng = substream(seed, &tag("pink"), tr);
            for ci in 0..c {
                let p = pink_noise(t_len, &mut planner, &mut rng);
                x.column_mut(ci).scaled_add(cfg.one_over_f_scale * sig_std, &p);
            }
        }
        if cfg.heteroscedastic_scale > 0.0 {
            let mut rng = substream(seed, &tag("hetero"), tr);
            let mode = cfg.heteroscedastic_mode;
            for (v, &s) in x.iter_mut().zip(clean.iter()) {
                let m = mode.modulation((s - mean) / sig_std);
                *v += cfg.heteroscedastic_scale * sig_std * m * normal(&mut rng);
            }
        }
        if cfg.row_drift_scale > 0.0 {
            let mut rng = substream(seed, &tag("drift"), tr);
            let per = geometry.contacts_per_row;
            for row in 0..geometry.n_rows {
                let d = random_walk(t_len, &mut rng);
                for ci in row * per..(row + 1) * per {
                    x.column_mut(ci).scaled_add(cfg.row_drift_scale * sig_std, &d);
                }
            }
        }
        if let Some(l) = &loadings {
            let mut rng = substream(seed, &tag("cm"), tr);
            for k in 0..cfg.common_mode_rank {
                let s = pink_noise(t_len, &mut planner, &mut rng);
                for ci in 0..c {
                    x.column_mut(ci).scaled_add(cfg.common_mode_scale * sig_std * l[[ci, k]], &s);
                }
            }
        }
        if cfg.gaussian_floor_std > 0.0 {
            let mut rng = substream(seed, &tag("floor"), tr);
            for v in x.iter_mut() {
                *v += cfg.gaussian_floor_std * sig_std * normal(&mut rng);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::bipolar_rereference;

    fn signals() -> Array3<f64> {
        Array3::from_shape_fn((60, 250, 8), |(n, t, c)| ((t as f64) * 0.07 * (c + 1) as f64 + n as f64).sin())
    }

    #[test]
    fn zero_scales_are_identity() {
        let s = signals();
        let g = ElectrodeGeometry::new("r", 2, 4);
        assert_eq!(add_structured_noise(&s, &g, &NoiseConfig::default(), 3, 0).unwrap(), s);
    }

    #[test]
    fn negative_scale_rejected() {
        let g = ElectrodeGeometry::new("r", 2, 4);
        let cfg = NoiseConfig {
            row_drift_scale: -0.1,
            ..NoiseConfig::default()
        };
        assert!(add_structured_noise(&signals(), &g, &cfg, 0, 0).is_err());
    }

    /// Averaged periodogram, log-log least-squares slope over 2–100 Hz.
    fn psd_slope(series: &[Array1<f64>], fs: f64) -> f64 {
        let t_len = series[0].len();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(t_len);
        let mut psd = vec![0.0; t_len / 2 + 1];
        for s in series {
            let mut buf: Vec<Complex<f64>> = s.iter().map(|&v| Complex::new(v, 0.0)).collect();
            fft.process(&mut buf);
            for (k, p) in psd.iter_mut().enumerate() {
                *p += buf[k].norm_sqr();
            }
        }
        let pts: Vec<(f64, f64)> = (1..psd.len())
            .map(|k| (k as f64 * fs / t_len as f64, psd[k]))
            .filter(|(f, _)| (2.0..=100.0).contains(f))
            .map(|(f, p)| (f.ln(), p.ln()))
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn pink_noise_slope() {
        let s = Array3::zeros((60, 250, 8));
        let g = ElectrodeGeometry::new("r", 2, 4);
        let cfg = NoiseConfig {
            one_over_f_scale: 1.0,
            ..NoiseConfig::default()
        };
        let noisy = add_structured_noise(&s, &g, &cfg, 8, 0).unwrap();
        let series: Vec<Array1<f64>> = (0..60).map(|n| noisy.slice(ndarray::s![n, .., 0]).to_owned()).collect();
        let slope = psd_slope(&series, 500.0);
        assert!((slope + 1.0).abs() <= 0.3, "slope {slope}");
    }

    #[test]
    fn common_mode_dominates_first_component() {
        let s = signals();
        let g = ElectrodeGeometry::new("r", 2, 4);
        let cfg = NoiseConfig {
            common_mode_rank: 1,
            common_mode_scale: 20.0,
            ..NoiseConfig::default()
        };
        let noisy = add_structured_noise(&s, &g, &cfg, 1, 0).unwrap();
        let flat = noisy.into_shape_with_order((60 * 250, 8)).unwrap();
        let mean = flat.mean_axis(Axis(0)).unwrap();
        let centred = &flat - &mean;
        let cov = centred.t().dot(&centred);
        let eig = nalgebra::DMatrix::from_fn(8, 8, |i, j| cov[[i, j]]).symmetric_eigen();
        let total: f64 = eig.eigenvalues.iter().sum();
        let top = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        assert!(top / total > 0.9, "first component {}", top / total);
    }

    #[test]
    fn row_drift_cancels_in_bipolar() {
        let s = signals();
        let g = ElectrodeGeometry::new("r", 2, 4);
        let cfg = NoiseConfig {
            row_drift_scale: 5.0,
            ..NoiseConfig::default()
        };
        let noisy = add_structured_noise(&s, &g, &cfg, 2, 0).unwrap();
        let a = bipolar_rereference(&s, &g).unwrap();
        let b = bipolar_rereference(&noisy, &g).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn heteroscedastic_scales_with_signal() {
        let s = signals();
        let g = ElectrodeGeometry::new("r", 2, 4);
        let cfg = NoiseConfig {
            heteroscedastic_scale: 0.5,
            ..NoiseConfig::default()
        };
        let noisy = add_structured_noise(&s, &g, &cfg, 2, 0).unwrap();
        let (mut lo, mut hi, mut nlo, mut nhi) = (0.0, 0.0, 0, 0);
        for (x, y) in s.iter().zip(noisy.iter()) {
            let e = (y - x).powi(2);
            if x.abs() < 0.2 {
                lo += e;
                nlo += 1;
            } else if x.abs() > 0.8 {
                hi += e;
                nhi += 1;
            }
        }
        assert!(hi / nhi as f64 > 10.0 * lo / nlo as f64);
    }
}
