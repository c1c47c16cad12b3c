use std::fmt;
use std::str::FromStr;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::{
    add_structured_noise, apply_region_warp, apply_time_varying_delay, bipolar_rereference, generate_latents,
    mix_to_observations, DelayConfig, ElectrodeGeometry, GeneratorConfig, HeteroscedasticMode, LatentBundle,
    MixingConfig, MixingMode, NoiseConfig, OscillatorConfig, Provenance, SplitTag, TrialDataset, WarpKind,
};
use crate::error::{Result, SpireError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    D0,
    D1,
    D2,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::D0, Preset::D1, Preset::D2];

    pub fn name(self) -> &'static str {
        match self {
            Preset::D0 => "D0",
            Preset::D1 => "D1",
            Preset::D2 => "D2",
        }
    }

    pub fn long_name(self) -> &'static str {
        match self {
            Preset::D0 => "D0_linear",
            Preset::D1 => "D1_warp_nonLinear",
            Preset::D2 => "D2_timevary_delay",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = SpireError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| s.eq_ignore_ascii_case(p.name()) || s.eq_ignore_ascii_case(p.long_name()))
            .ok_or_else(|| SpireError::config("preset", format!("unknown preset `{s}` (expected D0, D1 or D2)")))
    }
}

/// Fixed configuration of a preset: two regions of 3×4 contacts, 100 trials
/// of 250 samples at 500 Hz, three shared and three private dimensions.
pub fn preset_config(preset: Preset, seed: u64) -> GeneratorConfig {
    let base = GeneratorConfig {
        n_trials: 100,
        t_len: 250,
        fs: 500.0,
        d_shared: 3,
        d_private: 3,
        regions: vec![ElectrodeGeometry::new("region1", 3, 4), ElectrodeGeometry::new("region2", 3, 4)],
        latent_dynamics: OscillatorConfig::default(),
        warp: WarpKind::None,
        cubic_coefficient: 0.3,
        delay: DelayConfig::None,
        mixing: MixingConfig {
            private_gain: 0.5,
            ..MixingConfig::default()
        },
        noise: NoiseConfig {
            gaussian_floor_std: 0.05,
            ..NoiseConfig::default()
        },
        seed,
    };
    if preset == Preset::D0 {
        return base;
    }
    let nonlinear = GeneratorConfig {
        latent_dynamics: OscillatorConfig {
            ar_coefficient: 0.6,
            ar_noise_std: 0.3,
            ..OscillatorConfig::default()
        },
        warp: WarpKind::Monotone,
        mixing: MixingConfig {
            mode: MixingMode::GainBilinear,
            ..base.mixing.clone()
        },
        noise: NoiseConfig {
            one_over_f_scale: 0.2,
            heteroscedastic_mode: HeteroscedasticMode::Abs,
            heteroscedastic_scale: 0.1,
            row_drift_scale: 0.1,
            common_mode_rank: 1,
            common_mode_scale: 0.1,
            gaussian_floor_std: 0.05,
        },
        ..base
    };
    match preset {
        Preset::D1 => nonlinear,
        _ => GeneratorConfig {
            delay: DelayConfig::Sinusoidal {
                amplitude_samples: 3.0,
                period_samples: 250.0,
            },
            ..nonlinear
        },
    }
}

/// Full pipeline for an arbitrary configuration; uses `config.seed`.
pub fn generate(config: &GeneratorConfig, preset: Option<Preset>) -> Result<(TrialDataset, LatentBundle)> {
    config.validate()?;
    let seed = config.seed;
    let mut latents = generate_latents(config, seed)?;
    latents = apply_region_warp(&latents, config.warp, config.cubic_coefficient, seed)?;
    if let DelayConfig::Sinusoidal {
        amplitude_samples,
        period_samples,
    } = config.delay
    {
        latents = apply_time_varying_delay(&latents, amplitude_samples, period_samples)?;
    }
    let (clean, _) = mix_to_observations(&latents, &config.regions, &config.mixing, seed)?;
    let mut observations = Vec::with_capacity(clean.len());
    for (r, (sig, geom)) in clean.iter().zip(&config.regions).enumerate() {
        let noisy = add_structured_noise(sig, geom, &config.noise, seed, r)?;
        // observations are stored as f32; round now so in-memory and on-disk data agree
        observations.push(bipolar_rereference(&noisy, geom)?.mapv(|v| v as f32 as f64));
    }

    let mid = 0.5 * (config.latent_dynamics.base_freq_hz.0 + config.latent_dynamics.base_freq_hz.1);
    let labels = latents
        .shared_base_freq
        .index_axis(Axis(1), 0)
        .iter()
        .map(|&f| if f < mid { "low_freq" } else { "high_freq" }.to_string())
        .collect();

    let dataset = TrialDataset {
        observations,
        fs: config.fs,
        regions: config.regions.clone(),
        labels: Some(labels),
        provenance: Some(Provenance {
            preset: preset.map(|p| p.name().to_string()),
            config_hash: config.content_hash(),
            seed,
        }),
        split: SplitTag::Unsplit,
        trial_ids: (0..config.n_trials).collect(),
    };
    Ok((dataset, latents))
}

pub fn generate_preset(preset: Preset, seed: u64) -> Result<(TrialDataset, LatentBundle)> {
    generate(&preset_config(preset, seed), Some(preset))
}
