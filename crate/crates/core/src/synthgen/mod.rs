//! Ground-truth synthetic multi-region datasets.
//!
//! Pipeline: bursty oscillator latents → region-2 delay and warp → spatial
//! mixing onto electrode contacts → structured noise → bipolar derivation.
//! Every trial draws from its own substream of the root seed, so the output
//! does not depend on generation order.

mod distort;
mod latents;
mod mixing;
mod noise;
mod presets;

pub use distort::{apply_delay_profile, apply_region_warp, apply_time_varying_delay, sinusoidal_lag};
pub use latents::{generate_latents, oscillator_series};
pub use mixing::{mix_to_observations, MixingKernels};
pub use noise::{add_structured_noise, pink_noise};
pub use presets::{generate, generate_preset, preset_config, Preset};

use ndarray::{Array1, Array3, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SpireError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectrodeGeometry {
    pub name: String,
    pub n_rows: usize,
    pub contacts_per_row: usize,
}

impl ElectrodeGeometry {
    pub fn new(name: impl Into<String>, n_rows: usize, contacts_per_row: usize) -> Self {
        ElectrodeGeometry {
            name: name.into(),
            n_rows,
            contacts_per_row,
        }
    }

    pub fn contacts(&self) -> usize {
        self.n_rows * self.contacts_per_row
    }

    pub fn bipolar_channels(&self) -> usize {
        self.n_rows * self.contacts_per_row.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 {
            return Err(SpireError::Geometry(format!("region `{}` has no rows", self.name)));
        }
        if self.contacts_per_row < 2 {
            return Err(SpireError::Geometry(format!(
                "region `{}` has {} contact(s) per row; bipolar derivation needs at least 2",
                self.name, self.contacts_per_row
            )));
        }
        Ok(())
    }
}

/// Bursty oscillator parameters shared by all latent dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillatorConfig {
    /// Base frequencies are drawn uniformly from this range (Hz).
    pub base_freq_hz: (f64, f64),
    pub burst_freq_hz: (f64, f64),
    /// Per-sample probability of entering a burst.
    pub burst_prob: f64,
    /// Mean burst duration in seconds.
    pub burst_duration_s: f64,
    pub burst_amplitude: f64,
    /// Per-sample probability of redrawing the base frequency.
    pub jump_prob: f64,
    pub oscillator_amplitude: f64,
    /// AR(1) coefficient ρ; zero disables the filter.
    pub ar_coefficient: f64,
    /// Standard deviation of the white innovation fed through the filter.
    pub ar_noise_std: f64,
    /// Z-score each latent dimension within each trial.
    pub standardize: bool,
}

impl Default for OscillatorConfig {
    fn default() -> Self {
        OscillatorConfig {
            base_freq_hz: (4.0, 12.0),
            burst_freq_hz: (30.0, 40.0),
            burst_prob: 0.002,
            burst_duration_s: 0.05,
            burst_amplitude: 0.6,
            jump_prob: 0.002,
            oscillator_amplitude: 1.0,
            ar_coefficient: 0.0,
            ar_noise_std: 0.0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WarpKind {
    #[default]
    None,
    /// `sign(z)·|z|^p`, `p` drawn per dimension from `[0.6, 1.6]`.
    Monotone,
    /// `z + c·z³`.
    Cubic,
}

impl std::str::FromStr for WarpKind {
    type Err = SpireError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(WarpKind::None),
            "monotone" | "region_mismatch" => Ok(WarpKind::Monotone),
            "cubic" => Ok(WarpKind::Cubic),
            other => Err(SpireError::config("warp", format!("unknown warp kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayConfig {
    #[default]
    None,
    Sinusoidal {
        amplitude_samples: f64,
        period_samples: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MixingMode {
    #[default]
    Linear,
    Gain,
    Bilinear,
    GainBilinear,
}

impl MixingMode {
    pub fn has_gain(self) -> bool {
        matches!(self, MixingMode::Gain | MixingMode::GainBilinear)
    }

    pub fn has_bilinear(self) -> bool {
        matches!(self, MixingMode::Bilinear | MixingMode::GainBilinear)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingConfig {
    pub mode: MixingMode,
    /// Adds shared×private product terms.
    pub cross_terms: bool,
    pub bilinear_scale: f64,
    pub cross_scale: f64,
    /// Multiplies the private columns of the linear kernel.
    pub private_gain: f64,
    /// Per-contact tanh slopes are drawn from this range.
    pub gain_slope: (f64, f64),
    /// Width (in contact spacings) of the Gaussian spatial envelope.
    pub spatial_width: f64,
}

impl Default for MixingConfig {
    fn default() -> Self {
        MixingConfig {
            mode: MixingMode::Linear,
            cross_terms: false,
            bilinear_scale: 0.3,
            cross_scale: 0.2,
            private_gain: 1.0,
            gain_slope: (0.5, 2.0),
            spatial_width: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeteroscedasticMode {
    #[default]
    Abs,
    Power,
    Multiplicative,
}

impl HeteroscedasticMode {
    pub fn modulation(self, z: f64) -> f64 {
        match self {
            HeteroscedasticMode::Abs => z.abs(),
            HeteroscedasticMode::Power => z * z,
            HeteroscedasticMode::Multiplicative => 1.0 + z.abs(),
        }
    }
}

/// Noise amplitudes, each relative to the clean per-region signal standard
/// deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseConfig {
    pub one_over_f_scale: f64,
    pub heteroscedastic_mode: HeteroscedasticMode,
    pub heteroscedastic_scale: f64,
    pub row_drift_scale: f64,
    pub common_mode_rank: usize,
    pub common_mode_scale: f64,
    pub gaussian_floor_std: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("one_over_f_scale", self.one_over_f_scale),
            ("heteroscedastic_scale", self.heteroscedastic_scale),
            ("row_drift_scale", self.row_drift_scale),
            ("common_mode_scale", self.common_mode_scale),
            ("gaussian_floor_std", self.gaussian_floor_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SpireError::config(format!("noise.{name}"), "must be finite and ≥ 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_trials: usize,
    /// Samples per trial.
    #[serde(rename = "T")]
    pub t_len: usize,
    pub fs: f64,
    pub d_shared: usize,
    pub d_private: usize,
    pub regions: Vec<ElectrodeGeometry>,
    pub latent_dynamics: OscillatorConfig,
    pub warp: WarpKind,
    pub cubic_coefficient: f64,
    pub delay: DelayConfig,
    pub mixing: MixingConfig,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(SpireError::config("n_trials", "must be at least 1"));
        }
        if self.d_shared == 0 {
            return Err(SpireError::config("d_shared", "must be at least 1"));
        }
        if self.d_private == 0 {
            return Err(SpireError::config("d_private", "must be at least 1"));
        }
        if !(self.fs > 0.0) {
            return Err(SpireError::config("fs", "sampling rate must be positive"));
        }
        if self.t_len < 2 {
            return Err(SpireError::config("T", "need at least two samples"));
        }
        if self.regions.is_empty() {
            return Err(SpireError::config("regions", "need at least one region"));
        }
        for g in &self.regions {
            g.validate()?;
        }
        let rho = self.latent_dynamics.ar_coefficient;
        if !(0.0..1.0).contains(&rho) {
            return Err(SpireError::config("latent_dynamics.ar_coefficient", "ρ must lie in [0, 1)"));
        }
        for (name, p) in [
            ("latent_dynamics.burst_prob", self.latent_dynamics.burst_prob),
            ("latent_dynamics.jump_prob", self.latent_dynamics.jump_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SpireError::config(name, "probability must lie in [0, 1]"));
            }
        }
        if let DelayConfig::Sinusoidal {
            amplitude_samples,
            period_samples,
        } = self.delay
        {
            validate_delay(amplitude_samples, period_samples, self.t_len)?;
        }
        self.noise.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn validate_delay(amplitude: f64, period: f64, t_len: usize) -> Result<()> {
    if !(amplitude >= 0.0) {
        return Err(SpireError::config("delay.amplitude_samples", "must be ≥ 0"));
    }
    if !(period > 0.0) {
        return Err(SpireError::config("delay.period_samples", "must be > 0"));
    }
    if amplitude >= t_len as f64 / 4.0 {
        return Err(SpireError::config(
            "delay.amplitude_samples",
            format!("must be below T/4 = {}", t_len as f64 / 4.0),
        ));
    }
    if (t_len as f64) < 2.0 * amplitude + 1.0 {
        return Err(SpireError::config("T", "must be at least 2·amplitude + 1"));
    }
    Ok(())
}

/// Record of the warp applied to one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpDescriptor {
    pub kind: WarpKind,
    /// Per-dimension exponents (monotone) or the cubic coefficient.
    pub params: Vec<f64>,
}

impl WarpDescriptor {
    pub fn identity() -> Self {
        WarpDescriptor {
            kind: WarpKind::None,
            params: Vec::new(),
        }
    }
}

/// Ground-truth latent trajectories, indexed by region; each array is
/// `(n_trials, T, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBundle {
    pub shared: Vec<Array3<f64>>,
    pub private: Vec<Array3<f64>>,
    /// Per-sample lag applied to the second region, when delayed.
    pub delay_profile: Option<Array1<f64>>,
    pub warp: Vec<WarpDescriptor>,
    /// Initial base frequency of every shared dimension, `(n_trials, d_sh)`.
    pub shared_base_freq: ndarray::Array2<f64>,
}

impl LatentBundle {
    pub fn n_regions(&self) -> usize {
        self.shared.len()
    }

    pub fn n_trials(&self) -> usize {
        self.shared[0].len_of(Axis(0))
    }

    pub fn t_len(&self) -> usize {
        self.shared[0].len_of(Axis(1))
    }

    pub fn is_finite(&self) -> bool {
        self.shared
            .iter()
            .chain(&self.private)
            .all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Restricts every array to the given trials, in order.
    pub fn select_trials(&self, trials: &[usize]) -> LatentBundle {
        LatentBundle {
            shared: self.shared.iter().map(|a| a.select(Axis(0), trials)).collect(),
            private: self.private.iter().map(|a| a.select(Axis(0), trials)).collect(),
            delay_profile: self.delay_profile.clone(),
            warp: self.warp.clone(),
            shared_base_freq: self.shared_base_freq.select(Axis(0), trials),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    #[default]
    Unsplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub preset: Option<String>,
    pub config_hash: String,
    pub seed: u64,
}

/// Observed multichannel trials per region, `(n_trials, T, C')` each.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub observations: Vec<Array3<f64>>,
    pub fs: f64,
    pub regions: Vec<ElectrodeGeometry>,
    pub labels: Option<Vec<String>>,
    pub provenance: Option<Provenance>,
    pub split: SplitTag,
    /// Index of every trial in the originally generated dataset.
    pub trial_ids: Vec<usize>,
}

impl TrialDataset {
    pub fn n_trials(&self) -> usize {
        self.observations[0].len_of(Axis(0))
    }

    pub fn t_len(&self) -> usize {
        self.observations[0].len_of(Axis(1))
    }

    pub fn n_regions(&self) -> usize {
        self.observations.len()
    }

    pub fn channels(&self) -> Vec<usize> {
        self.observations.iter().map(|o| o.len_of(Axis(2))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.observations.is_empty() {
            return Err(SpireError::shape("dataset has no regions"));
        }
        let (n, t) = (self.n_trials(), self.t_len());
        for o in &self.observations {
            if o.len_of(Axis(0)) != n || o.len_of(Axis(1)) != t {
                return Err(SpireError::shape("regions disagree on trial count or length"));
            }
        }
        if self.trial_ids.len() != n {
            return Err(SpireError::shape("trial id list does not match trial count"));
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(SpireError::shape("label list does not match trial count"));
            }
        }
        Ok(())
    }

    /// Restricts to the given trials (positions in this dataset).
    pub fn select_trials(&self, trials: &[usize], split: SplitTag) -> TrialDataset {
        TrialDataset {
            observations: self
                .observations
                .iter()
                .map(|o| o.select(Axis(0), trials))
                .collect(),
            fs: self.fs,
            regions: self.regions.clone(),
            labels: self
                .labels
                .as_ref()
                .map(|l| trials.iter().map(|&i| l[i].clone()).collect()),
            provenance: self.provenance.clone(),
            split,
            trial_ids: trials.iter().map(|&i| self.trial_ids[i]).collect(),
        }
    }
}

/// Differences of adjacent same-row contacts. Contacts are laid out
/// row-major, `(n_trials, T, n_rows * contacts_per_row)`.
pub fn bipolar_rereference(signals: &Array3<f64>, geometry: &ElectrodeGeometry) -> Result<Array3<f64>> {
    geometry.validate()?;
    let (n, t, c) = signals.dim();
    if c != geometry.contacts() {
        return Err(SpireError::Geometry(format!(
            "signals have {c} contacts, geometry `{}` expects {}",
            geometry.name,
            geometry.contacts()
        )));
    }
    let per = geometry.contacts_per_row;
    let mut out = Array3::zeros((n, t, geometry.bipolar_channels()));
    for row in 0..geometry.n_rows {
        for j in 0..per - 1 {
            let a = signals.index_axis(Axis(2), row * per + j);
            let b = signals.index_axis(Axis(2), row * per + j + 1);
            let mut dst = out.index_axis_mut(Axis(2), row * (per - 1) + j);
            dst.assign(&(&a - &b));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    #[test]
    fn bipolar_is_adjacent_difference() {
        let g = ElectrodeGeometry::new("r", 1, 3);
        let s = array![[[5.0, 2.0, 7.0]]];
        let b = bipolar_rereference(&s, &g).unwrap();
        assert_eq!(b, array![[[3.0, -5.0]]]);
    }

    #[test]
    fn bipolar_rejects_single_contact_rows() {
        let g = ElectrodeGeometry::new("r", 2, 1);
        let s = Array3::zeros((1, 4, 2));
        assert!(matches!(bipolar_rereference(&s, &g), Err(SpireError::Geometry(_))));
    }

    #[test]
    fn bipolar_cancels_row_common_signal_exactly() {
        let g = ElectrodeGeometry::new("r", 2, 4);
        let s = Array::from_shape_fn((2, 6, 8), |(n, t, c)| ((n * 31 + t * 7 + c * 3) as f64).sin());
        let common = Array::from_shape_fn((2, 6), |(n, t)| (n + t) as f64 * 0.5);
        let mut shifted = s.clone();
        for c in 0..8 {
            let mut col = shifted.index_axis_mut(Axis(2), c);
            col += &common;
        }
        let base = bipolar_rereference(&s, &g).unwrap();
        let moved = bipolar_rereference(&shifted, &g).unwrap();
        assert_eq!(moved.dim(), (2, 6, 6));
        for (a, b) in base.iter().zip(moved.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation_names_fields() {
        let mut c = preset_config(Preset::D0, 0);
        c.latent_dynamics.ar_coefficient = 1.0;
        match c.validate() {
            Err(SpireError::Config { field, .. }) => assert!(field.contains("ar_coefficient")),
            other => panic!("expected config error, got {other:?}"),
        }
        let mut c = preset_config(Preset::D0, 0);
        c.n_trials = 0;
        assert!(c.validate().is_err());
        let mut c = preset_config(Preset::D2, 0);
        c.delay = DelayConfig::Sinusoidal {
            amplitude_samples: 70.0,
            period_samples: 250.0,
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn warp_kind_parsing() {
        assert_eq!("monotone".parse::<WarpKind>().unwrap(), WarpKind::Monotone);
        assert!("spline".parse::<WarpKind>().is_err());
    }
}
