//! Directory containers: a `manifest.json` plus one raw little-endian,
//! row-major binary file per array.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, ArrayD, ArrayViewD, Axis, IxDyn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpireError};
use crate::synthgen::{
    ElectrodeGeometry, GeneratorConfig, LatentBundle, Provenance, SplitTag, TrialDataset, WarpDescriptor,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub file: String,
}

pub fn write_array(dir: &Path, name: &str, a: ArrayViewD<f64>, dtype: Dtype) -> Result<ArrayEntry> {
    let file = format!("{name}.bin");
    let mut bytes = Vec::with_capacity(a.len() * dtype.width());
    for &v in a.iter() {
        match dtype {
            Dtype::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    let path = dir.join(&file);
    fs::write(&path, bytes).map_err(|e| SpireError::io(&path, e))?;
    Ok(ArrayEntry {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        dtype,
        file,
    })
}

pub fn read_array(dir: &Path, entry: &ArrayEntry) -> Result<ArrayD<f64>> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| SpireError::io(&path, e))?;
    let n: usize = entry.shape.iter().product();
    let w = entry.dtype.width();
    if bytes.len() != n * w {
        return Err(SpireError::container(
            &path,
            format!("expected {} bytes for shape {:?}, found {}", n * w, entry.shape, bytes.len()),
        ));
    }
    let data: Vec<f64> = match entry.dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    ArrayD::from_shape_vec(IxDyn(&entry.shape), data).map_err(|e| SpireError::container(&path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| SpireError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| SpireError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SpireError::container(path, e.to_string()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SpireError::io(dir, e))
}

fn find<'a>(arrays: &'a [ArrayEntry], name: &str, dir: &Path) -> Result<&'a ArrayEntry> {
    arrays
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| SpireError::container(dir, format!("missing array `{name}`")))
}

fn read3(dir: &Path, arrays: &[ArrayEntry], name: &str) -> Result<Array3<f64>> {
    read_array(dir, find(arrays, name, dir)?)?
        .into_dimensionality()
        .map_err(|e| SpireError::container(dir.join(MANIFEST), format!("`{name}`: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub preset: Option<String>,
    pub seed: u64,
    pub n_trials: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub fs: f64,
    pub regions: Vec<ElectrodeGeometry>,
    pub arrays: Vec<ArrayEntry>,
    pub split: SplitTag,
    pub config_hash: Option<String>,
    pub config: Option<GeneratorConfig>,
    pub labels: Option<Vec<String>>,
    pub trial_ids: Vec<usize>,
    pub warp: Option<Vec<WarpDescriptor>>,
}

/// Writes observations and, when given, the ground-truth latents.
pub fn save_dataset(
    dir: &Path,
    dataset: &TrialDataset,
    latents: Option<&LatentBundle>,
    config: Option<&GeneratorConfig>,
) -> Result<PathBuf> {
    dataset.validate()?;
    ensure_dir(dir)?;
    let mut arrays = Vec::new();
    for (r, o) in dataset.observations.iter().enumerate() {
        arrays.push(write_array(dir, &format!("obs_r{r}"), o.view().into_dyn(), Dtype::F32)?);
    }
    if let Some(b) = latents {
        for r in 0..b.n_regions() {
            arrays.push(write_array(dir, &format!("latent_shared_r{r}"), b.shared[r].view().into_dyn(), Dtype::F32)?);
            arrays.push(write_array(dir, &format!("latent_private_r{r}"), b.private[r].view().into_dyn(), Dtype::F32)?);
        }
        arrays.push(write_array(dir, "shared_base_freq", b.shared_base_freq.view().into_dyn(), Dtype::F32)?);
        if let Some(d) = &b.delay_profile {
            arrays.push(write_array(dir, "delay_profile", d.view().into_dyn(), Dtype::F32)?);
        }
    }
    let prov = dataset.provenance.as_ref();
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        preset: prov.and_then(|p| p.preset.clone()),
        seed: prov.map_or(0, |p| p.seed),
        n_trials: dataset.n_trials(),
        t_len: dataset.t_len(),
        fs: dataset.fs,
        regions: dataset.regions.clone(),
        arrays,
        split: dataset.split,
        config_hash: prov.map(|p| p.config_hash.clone()),
        config: config.cloned(),
        labels: dataset.labels.clone(),
        trial_ids: dataset.trial_ids.clone(),
        warp: latents.map(|b| b.warp.clone()),
    };
    let path = dir.join(MANIFEST);
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(SpireError::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset manifest not found"),
        ));
    }
    let m: DatasetManifest = read_json(&path)?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(SpireError::container(&path, format!("unsupported schema version {}", m.schema_version)));
    }
    Ok(m)
}

/// Loads a dataset container; the latent bundle is `None` when the container
/// carries no ground truth.
pub fn load_dataset(dir: &Path) -> Result<(TrialDataset, Option<LatentBundle>)> {
    let m = load_manifest(dir)?;
    let arrays = &m.arrays;
    let observations = (0..m.regions.len())
        .map(|r| read3(dir, arrays, &format!("obs_r{r}")))
        .collect::<Result<Vec<_>>>()?;
    let dataset = TrialDataset {
        observations,
        fs: m.fs,
        regions: m.regions.clone(),
        labels: m.labels.clone(),
        provenance: m.config_hash.clone().map(|h| Provenance {
            preset: m.preset.clone(),
            config_hash: h,
            seed: m.seed,
        }),
        split: m.split,
        trial_ids: m.trial_ids.clone(),
    };
    dataset
        .validate()
        .map_err(|e| SpireError::container(dir.join(MANIFEST), e.to_string()))?;

    let has_latents = arrays.iter().any(|e| e.name == "latent_shared_r0");
    let bundle = if has_latents {
        let n_regions = m.regions.len();
        let shared = (0..n_regions)
            .map(|r| read3(dir, arrays, &format!("latent_shared_r{r}")))
            .collect::<Result<Vec<_>>>()?;
        let private = (0..n_regions)
            .map(|r| read3(dir, arrays, &format!("latent_private_r{r}")))
            .collect::<Result<Vec<_>>>()?;
        let freq = read_array(dir, find(arrays, "shared_base_freq", dir)?)?
            .into_dimensionality()
            .map_err(|e| SpireError::container(dir, e.to_string()))?;
        let delay_profile = match arrays.iter().find(|e| e.name == "delay_profile") {
            Some(e) => Some(
                read_array(dir, e)?
                    .into_dimensionality()
                    .map_err(|e| SpireError::container(dir, e.to_string()))?,
            ),
            None => None,
        };
        Some(LatentBundle {
            shared,
            private,
            delay_profile,
            warp: m.warp.clone().unwrap_or_else(|| vec![WarpDescriptor::identity(); n_regions]),
            shared_base_freq: freq,
        })
    } else {
        None
    };
    if let Some(b) = &bundle {
        if b.n_trials() != m.n_trials || b.shared[0].len_of(Axis(1)) != m.t_len {
            return Err(SpireError::container(dir.join(MANIFEST), "latents disagree with observations"));
        }
    }
    Ok((dataset, bundle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_preset, preset_config, Preset};

    #[test]
    fn dataset_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let (d, b) = generate_preset(Preset::D2, 1).unwrap();
        save_dataset(tmp.path(), &d, Some(&b), Some(&preset_config(Preset::D2, 1))).unwrap();
        let (d2, b2) = load_dataset(tmp.path()).unwrap();
        // observations are already f32-rounded, so the round trip is exact
        assert_eq!(d, d2);
        let b2 = b2.unwrap();
        assert_eq!(b2.warp, b.warp);
        assert!(b2.delay_profile.is_some());
        for (x, y) in b.shared[1].iter().zip(b2.shared[1].iter()) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let (d, _) = generate_preset(Preset::D0, 0).unwrap();
        save_dataset(tmp.path(), &d, None, None).unwrap();
        fs::write(tmp.path().join("obs_r0.bin"), [0u8; 10]).unwrap();
        assert!(matches!(load_dataset(tmp.path()), Err(SpireError::Container { .. })));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(&tmp.path().join("nope")), Err(SpireError::Io { .. })));
    }
}
