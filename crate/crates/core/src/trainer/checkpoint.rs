use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::data::NormStats;
use super::optim::{EarlyStopping, PlateauScheduler};
use super::ModelConfig;
use crate::container::{ensure_dir, read_array, read_json, write_array, write_json, ArrayEntry, Dtype, SCHEMA_VERSION};
use crate::error::{Result, SpireError};
use crate::model::{ModelDims, SpireParams};

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";

/// Optimizer and bookkeeping state needed to resume exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub next_epoch: usize,
    pub lr: f64,
    pub plateau: PlateauScheduler,
    pub early_stop: EarlyStopping,
    pub adam_step: u64,
    pub stopped: bool,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub dims: ModelDims,
    pub model: ModelConfig,
    pub seed: u64,
    /// Epoch whose parameters are stored.
    pub epoch: usize,
    pub norm: NormStats,
    pub arrays: Vec<ArrayEntry>,
    pub state: Option<TrainerState>,
}

/// Everything a checkpoint may carry beyond the model parameters.
pub struct CheckpointExtras<'a> {
    pub state: Option<TrainerState>,
    pub adam: Option<(&'a SpireParams, &'a SpireParams)>,
    pub best: Option<&'a SpireParams>,
}

fn write_group(dir: &Path, prefix: &str, p: &SpireParams, arrays: &mut Vec<ArrayEntry>) -> Result<()> {
    for t in p.tensors() {
        arrays.push(write_array(dir, &format!("{prefix}.{}", t.name), t.value.view(), Dtype::F64)?);
    }
    Ok(())
}

fn read_group(dir: &Path, prefix: &str, arrays: &[ArrayEntry], into: &mut SpireParams) -> Result<()> {
    for mut t in into.tensors_mut() {
        let name = format!("{prefix}.{}", t.name);
        let entry = arrays
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| SpireError::container(dir, format!("missing array `{name}`")))?;
        let a: ArrayD<f64> = read_array(dir, entry)?;
        if a.shape() != t.value.shape() {
            return Err(SpireError::container(
                dir,
                format!("`{name}` has shape {:?}, model expects {:?}", a.shape(), t.value.shape()),
            ));
        }
        let shape = IxDyn(t.value.shape());
        t.value.assign(&a.into_shape_with_order(shape).expect("same size"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint(
    dir: &Path,
    params: &SpireParams,
    model: &ModelConfig,
    norm: &NormStats,
    seed: u64,
    epoch: usize,
    extras: CheckpointExtras<'_>,
) -> Result<()> {
    ensure_dir(dir)?;
    let mut arrays = Vec::new();
    write_group(dir, "param", params, &mut arrays)?;
    if let Some((m, v)) = extras.adam {
        write_group(dir, "adam_m", m, &mut arrays)?;
        write_group(dir, "adam_v", v, &mut arrays)?;
    }
    if let Some(b) = extras.best {
        write_group(dir, "best", b, &mut arrays)?;
    }
    let manifest = CheckpointManifest {
        schema_version: SCHEMA_VERSION,
        dims: params.dims.clone(),
        model: model.clone(),
        seed,
        epoch,
        norm: norm.clone(),
        arrays,
        state: extras.state,
    };
    write_json(&dir.join(CHECKPOINT_MANIFEST), &manifest)
}

pub struct LoadedCheckpoint {
    pub manifest: CheckpointManifest,
    pub params: SpireParams,
    pub adam: Option<(SpireParams, SpireParams)>,
    pub best: Option<SpireParams>,
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    if !path.exists() {
        return Err(SpireError::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint manifest not found"),
        ));
    }
    let manifest: CheckpointManifest = read_json(&path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(SpireError::container(&path, "unsupported schema version"));
    }
    manifest
        .dims
        .validate()
        .map_err(|e| SpireError::container(&path, e.to_string()))?;
    let has = |prefix: &str| manifest.arrays.iter().any(|e| e.name.starts_with(prefix));
    let mut params = SpireParams::zeros(&manifest.dims);
    read_group(dir, "param", &manifest.arrays, &mut params)?;
    let adam = if has("adam_m.") {
        let mut m = params.zeros_like();
        let mut v = params.zeros_like();
        read_group(dir, "adam_m", &manifest.arrays, &mut m)?;
        read_group(dir, "adam_v", &manifest.arrays, &mut v)?;
        Some((m, v))
    } else {
        None
    };
    let best = if has("best.") {
        let mut b = params.zeros_like();
        read_group(dir, "best", &manifest.arrays, &mut b)?;
        Some(b)
    } else {
        None
    };
    Ok(LoadedCheckpoint {
        manifest,
        params,
        adam,
        best,
    })
}
