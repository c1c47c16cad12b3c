use std::f64::consts::PI;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{GeneratorConfig, LatentBundle, OscillatorConfig, WarpDescriptor};
use crate::error::Result;
use crate::rng::{substream, SpireRng};

/// One latent dimension for one trial. Returns the series and the initial
/// base frequency.
pub fn oscillator_series(cfg: &OscillatorConfig, t_len: usize, fs: f64, rng: &mut SpireRng) -> (Array1<f64>, f64) {
    let (f_lo, f_hi) = cfg.base_freq_hz;
    let draw_base = |rng: &mut SpireRng| if f_hi > f_lo { rng.random_range(f_lo..f_hi) } else { f_lo };
    let f0 = draw_base(rng);
    let mut freq = f0;
    let mut phase = rng.random_range(0.0..2.0 * PI);

    let mean_burst = (cfg.burst_duration_s * fs).max(3.0);
    let mut burst: Option<(usize, usize, f64, f64)> = None; // (pos, len, freq, phase)

    let rho = cfg.ar_coefficient;
    let mut y_prev = if rho > 0.0 && cfg.ar_noise_std > 0.0 {
        let s: f64 = rng.sample(StandardNormal);
        s * cfg.ar_noise_std / (1.0 - rho * rho).sqrt()
    } else {
        0.0
    };

    let mut out = Array1::zeros(t_len);
    for t in 0..t_len {
        if cfg.jump_prob > 0.0 && rng.random::<f64>() < cfg.jump_prob {
            freq = draw_base(rng);
        }
        let mut s = cfg.oscillator_amplitude * phase.sin();
        phase += 2.0 * PI * freq / fs;

        if burst.is_none() && cfg.burst_prob > 0.0 && rng.random::<f64>() < cfg.burst_prob {
            let len = (mean_burst * rng.random_range(0.5..1.5)).round().max(3.0) as usize;
            let (b_lo, b_hi) = cfg.burst_freq_hz;
            let bf = if b_hi > b_lo { rng.random_range(b_lo..b_hi) } else { b_lo };
            burst = Some((0, len, bf, rng.random_range(0.0..2.0 * PI)));
        }
        if let Some((pos, len, bf, bphase)) = burst {
            let w = 0.5 * (1.0 - (2.0 * PI * pos as f64 / (len - 1) as f64).cos());
            s += cfg.burst_amplitude * w * (2.0 * PI * bf * pos as f64 / fs + bphase).sin();
            burst = if pos + 1 < len { Some((pos + 1, len, bf, bphase)) } else { None };
        }

        if cfg.ar_noise_std > 0.0 {
            let e: f64 = rng.sample(StandardNormal);
            s += cfg.ar_noise_std * e;
        }
        let y = rho * y_prev + s;
        out[t] = y;
        y_prev = y;
    }

    if cfg.standardize {
        let mean = out.mean().unwrap_or(0.0);
        out -= mean;
        let sd = out.mapv(|v| v * v).mean().unwrap_or(0.0).sqrt();
        if sd > 1e-12 {
            out /= sd;
        }
    }
    (out, f0)
}

fn latent_block(
    cfg: &GeneratorConfig,
    seed: u64,
    stream: &str,
    d: usize,
    freqs: Option<&mut Array2<f64>>,
) -> Array3<f64> {
    let mut block = Array3::zeros((cfg.n_trials, cfg.t_len, d));
    let mut f_out = freqs;
    for trial in 0..cfg.n_trials {
        let mut rng = substream(seed, stream, trial as u64);
        for k in 0..d {
            let (series, f0) = oscillator_series(&cfg.latent_dynamics, cfg.t_len, cfg.fs, &mut rng);
            block.index_axis_mut(Axis(0), trial).column_mut(k).assign(&series);
            if let Some(f) = f_out.as_deref_mut() {
                f[[trial, k]] = f0;
            }
        }
    }
    block
}

/// Shared latents are drawn once and copied to every region; private latents
/// are independent per region. No warp or delay is applied here.
pub fn generate_latents(config: &GeneratorConfig, seed: u64) -> Result<LatentBundle> {
    config.validate()?;
    let mut freqs = Array2::zeros((config.n_trials, config.d_shared));
    let shared = latent_block(config, seed, "latent-shared", config.d_shared, Some(&mut freqs));
    let n_regions = config.regions.len();
    let private = (0..n_regions)
        .map(|r| latent_block(config, seed, &format!("latent-private-{r}"), config.d_private, None))
        .collect();
    Ok(LatentBundle {
        shared: vec![shared; n_regions],
        private,
        delay_profile: None,
        warp: vec![WarpDescriptor::identity(); n_regions],
        shared_base_freq: freqs,
    })
}
