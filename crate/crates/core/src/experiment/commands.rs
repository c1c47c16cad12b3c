use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ablation::AblationSpec;
use super::config::{DataSpec, ExperimentConfig};
use super::plots::{bar_summary_svg, latent_traces_svg};
use crate::container::{ensure_dir, load_dataset, read_json, save_dataset, write_json, MANIFEST};
use crate::error::{Result, SpireError};
use crate::eval::{evaluate_run, EvalOptions, EvalReport, RunEval, TrainedModel};
use crate::synthgen::{generate, generate_preset, preset_config, LatentBundle, Preset, SplitTag, TrialDataset};
use crate::trainer::{train_with_io, CheckpointManifest, RunIo, CHECKPOINT_MANIFEST};

pub const RUN_META: &str = "run.json";
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const EVAL_JSON: &str = "eval.json";

/// Process exit codes per error class.
pub fn exit_code(e: &SpireError) -> i32 {
    match e {
        SpireError::Config { .. } | SpireError::Argument(_) => 2,
        SpireError::Geometry(_)
        | SpireError::Shape(_)
        | SpireError::UnsupportedDataset(_)
        | SpireError::MissingDataset(_)
        | SpireError::Container { .. } => 3,
        SpireError::Divergence { .. } => 4,
        SpireError::Io { .. } => 5,
    }
}

/// Writes the preset's container to `dir`. Reruns produce identical bytes.
pub fn cmd_generate(preset: Preset, seed: u64, dir: &Path) -> Result<PathBuf> {
    let (data, bundle) = generate_preset(preset, seed)?;
    save_dataset(dir, &data, Some(&bundle), Some(&preset_config(preset, seed)))?;
    Ok(dir.to_path_buf())
}

/// Default location of a generated container under an output root.
pub fn dataset_dir(root: &Path, preset: Preset, seed: u64) -> PathBuf {
    root.join("data").join(format!("{}_seed{seed}", preset.name()))
}

pub fn load_data(spec: &DataSpec) -> Result<(TrialDataset, Option<LatentBundle>)> {
    if let Some(path) = &spec.path {
        if !path.join(MANIFEST).is_file() {
            return Err(SpireError::MissingDataset(path.clone()));
        }
        return load_dataset(path);
    }
    let preset = spec
        .preset()?
        .ok_or_else(|| SpireError::config("data", "set either `path` or `preset`"))?;
    let (d, b) = generate(&preset_config(preset, spec.seed), Some(preset))?;
    Ok((d, Some(b)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Diverged { epoch: usize, term: String },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub name: String,
    pub variant: String,
    pub config_hash: String,
    pub seed: u64,
    pub data: String,
    pub status: RunStatus,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    /// Wall-clock training time of the last (possibly resumed) session.
    #[serde(default)]
    pub train_seconds: Option<f64>,
}

impl RunMeta {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let p = run_dir.join(RUN_META);
        if !p.is_file() {
            return Err(SpireError::io(&p, std::io::Error::new(std::io::ErrorKind::NotFound, "run metadata not found")));
        }
        read_json(&p)
    }
}

/// `<root>/runs/<name>-<variant>-<hash12>/seed_<seed>`.
pub fn run_dir(root: &Path, cfg: &ExperimentConfig, variant: &str, seed: u64) -> Result<PathBuf> {
    let hash = cfg.content_hash()?;
    Ok(root
        .join("runs")
        .join(format!("{}-{}-{}", cfg.name, variant, &hash[..12]))
        .join(format!("seed_{seed}")))
}

/// Trains one seed into its run directory. With `resume`, a complete run
/// with the same hash is reused and an interrupted one continues from its
/// last checkpoint.
pub fn train_one(
    cfg: &ExperimentConfig,
    variant: &str,
    seed: u64,
    root: &Path,
    data: &TrialDataset,
    resume: bool,
) -> Result<PathBuf> {
    let resolved = cfg.resolved_for_seed(seed)?;
    let hash = cfg.content_hash()?;
    let dir = run_dir(root, cfg, variant, seed)?;
    if resume {
        if let Ok(meta) = RunMeta::load(&dir) {
            if meta.status == RunStatus::Complete && meta.config_hash == hash {
                log::info!("{}: already complete", dir.display());
                return Ok(dir);
            }
        }
    }
    ensure_dir(&dir)?;
    let cfg_path = dir.join(RESOLVED_CONFIG);
    fs::write(&cfg_path, resolved.to_toml()?).map_err(|e| SpireError::io(&cfg_path, e))?;
    let mut meta = RunMeta {
        name: cfg.name.clone(),
        variant: variant.into(),
        config_hash: hash,
        seed,
        data: data
            .provenance
            .as_ref()
            .and_then(|p| p.preset.clone())
            .unwrap_or_else(|| cfg.data.label()),
        status: RunStatus::Running,
        epochs_run: 0,
        best_epoch: None,
        stopped_early: false,
        train_seconds: None,
    };
    write_json(&dir.join(RUN_META), &meta)?;
    let started = std::time::Instant::now();
    let io = RunIo {
        dir: dir.clone(),
        checkpoint_every: cfg.checkpoint_every,
        resume,
    };
    let schedule = resolved.schedule.resolve()?;
    match train_with_io(data, &resolved.model, &schedule, &resolved.train, Some(&io)) {
        Ok(out) => {
            meta.status = RunStatus::Complete;
            meta.epochs_run = out.history.epochs.len();
            meta.best_epoch = out.best_epoch;
            meta.stopped_early = out.stopped_early;
            meta.train_seconds = Some(started.elapsed().as_secs_f64());
            write_json(&dir.join(RUN_META), &meta)?;
            Ok(dir)
        }
        Err(e) => {
            meta.status = match &e {
                SpireError::Divergence { epoch, term } => RunStatus::Diverged {
                    epoch: *epoch,
                    term: term.clone(),
                },
                other => RunStatus::Failed { reason: other.to_string() },
            };
            write_json(&dir.join(RUN_META), &meta)?;
            Err(e)
        }
    }
}

/// Runs `jobs` on up to `threads` worker threads, keeping input order.
fn parallel_map<T: Sync, R: Send>(jobs: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, jobs.len().max(1));
    if threads == 1 {
        return jobs.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("job ran")).collect()
}

/// Trains every seed of a variant. Seeds are independent; one failing seed
/// does not stop the others.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    variant: &AblationSpec,
    seeds: &[u64],
    root: &Path,
    resume: bool,
    threads: usize,
) -> Result<Vec<(u64, Result<PathBuf>)>> {
    let cfg = variant.apply(cfg)?;
    cfg.validate()?;
    let (data, _) = load_data(&cfg.data)?;
    Ok(parallel_map(seeds, threads, |&s| (s, train_one(&cfg, &variant.name, s, root, &data, resume))))
}

/// Held-out trials of a run: the validation ids recorded at training time.
pub fn held_out_trials(run_dir: &Path, data: &TrialDataset) -> Result<TrialDataset> {
    let ck: CheckpointManifest = read_json(&run_dir.join("checkpoint_last").join(CHECKPOINT_MANIFEST))?;
    let state = ck
        .state
        .ok_or_else(|| SpireError::container(run_dir, "last checkpoint has no trainer state"))?;
    let pos: HashMap<usize, usize> = data.trial_ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
    let picks = state
        .val_ids
        .iter()
        .map(|id| pos.get(id).copied().ok_or_else(|| SpireError::shape(format!("trial {id} missing from dataset"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(data.select_trials(&picks, SplitTag::Val))
}

fn evaluate_dir(
    run_dir: &Path,
    dataset_override: Option<&Path>,
    opts: &EvalOptions,
    cache: &mut BTreeMap<String, (TrialDataset, Option<LatentBundle>)>,
) -> Result<(RunEval, String)> {
    let meta = RunMeta::load(run_dir)?;
    let label = format!("{}/{}", meta.name, meta.variant);
    if meta.status != RunStatus::Complete {
        return Ok((RunEval::failed(label, meta.seed, format!("incomplete run ({:?})", meta.status)), meta.data));
    }
    let cfg = ExperimentConfig::load(&run_dir.join(RESOLVED_CONFIG))?;
    let spec = match dataset_override {
        Some(p) => DataSpec {
            path: Some(p.to_path_buf()),
            ..DataSpec::default()
        },
        None => cfg.data.clone(),
    };
    let key = serde_json::to_string(&spec).unwrap_or_default();
    if !cache.contains_key(&key) {
        cache.insert(key.clone(), load_data(&spec)?);
    }
    let (data, bundle) = &cache[&key];
    let model = TrainedModel::load(&run_dir.join("checkpoint_best"))?;
    let held = held_out_trials(run_dir, data)?;
    let ev = evaluate_run(&label, meta.seed, &model, &held, bundle.as_ref(), opts)?;
    Ok((ev, meta.data))
}

/// Evaluates every run and writes `eval.txt`, `eval.csv`, `eval.json` and
/// SVG figures to `out`. Runs that cannot be evaluated are listed as
/// incomplete; the rest are still evaluated.
pub fn cmd_eval(run_dirs: &[PathBuf], dataset: Option<&Path>, opts: &EvalOptions, out: &Path) -> Result<EvalReport> {
    if run_dirs.is_empty() {
        return Err(SpireError::Argument("no run directories given".into()));
    }
    let mut cache = BTreeMap::new();
    let mut report = EvalReport::default();
    let mut regimes = Vec::new();
    for dir in run_dirs {
        match evaluate_dir(dir, dataset, opts, &mut cache) {
            Ok((ev, regime)) => {
                regimes.push(regime);
                report.runs.push(ev);
            }
            Err(e) => {
                log::warn!("{}: {e}", dir.display());
                let (name, seed) = match RunMeta::load(dir) {
                    Ok(m) => {
                        regimes.push(m.data);
                        (format!("{}/{}", m.name, m.variant), m.seed)
                    }
                    Err(_) => (dir.display().to_string(), 0),
                };
                report.runs.push(RunEval::failed(name, seed, e.to_string()));
            }
        }
    }
    regimes.sort();
    regimes.dedup();
    report.dataset = regimes.join("+");
    write_report(&report, out)?;
    if let Some(i) = report.runs.iter().position(|r| r.error.is_none()) {
        plot_first_run(&run_dirs[i], dataset, &mut cache, &out.join("latent_traces.svg"))?;
    }
    Ok(report)
}

pub fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let put = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| SpireError::io(&p, e))
    };
    put("eval.txt", report.to_text())?;
    put("eval.csv", report.to_csv())?;
    write_json(&out.join(EVAL_JSON), report)?;
    let agg = report.aggregate();
    let get = |m: &str| agg.get(&("all".to_string(), m.to_string())).map(|v| (v.0, v.1));
    if let (Some(sh), Some(pr)) = (get("cca_shared_mean"), get("cca_private_mean")) {
        bar_summary_svg(
            &out.join("cca_summary.svg"),
            &format!("latent recovery ({})", report.dataset),
            &[(
                report.dataset.clone(),
                vec![("shared".into(), sh.0, sh.1), ("private".into(), pr.0, pr.1)],
            )],
        )?;
    }
    Ok(())
}

fn plot_first_run(
    run_dir: &Path,
    dataset: Option<&Path>,
    cache: &mut BTreeMap<String, (TrialDataset, Option<LatentBundle>)>,
    path: &Path,
) -> Result<()> {
    let cfg = ExperimentConfig::load(&run_dir.join(RESOLVED_CONFIG))?;
    let spec = match dataset {
        Some(p) => DataSpec {
            path: Some(p.to_path_buf()),
            ..DataSpec::default()
        },
        None => cfg.data.clone(),
    };
    let key = serde_json::to_string(&spec).unwrap_or_default();
    if !cache.contains_key(&key) {
        cache.insert(key.clone(), load_data(&spec)?);
    }
    let (data, _) = &cache[&key];
    let model = TrainedModel::load(&run_dir.join("checkpoint_best"))?;
    let held = held_out_trials(run_dir, data)?;
    let lat = model.latents(&held)?;
    let mut blocks = Vec::new();
    for (r, g) in held.regions.iter().enumerate() {
        blocks.push((format!("{} shared", g.name), lat.shared[r].clone()));
        blocks.push((format!("{} private", g.name), lat.private[r].clone()));
    }
    latent_traces_svg(path, &blocks, held.fs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub cca_shared: Option<f64>,
    pub cca_private: Option<f64>,
    pub mse_full: Option<f64>,
    /// Shared CCA minus the full model's on the same seed.
    pub delta_shared: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = String::from("variant,seed,cca_shared,cca_private,mse_full,delta_shared,error\n");
        for r in &self.rows {
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.variant,
                r.seed,
                f(r.cca_shared),
                f(r.cca_private),
                f(r.mse_full),
                f(r.delta_shared),
                err
            );
        }
        s
    }

    /// Per variant: seeds where shared CCA fell below the full model's, out
    /// of seeds where both were evaluated.
    pub fn below_full(&self) -> BTreeMap<String, (usize, usize)> {
        let mut m: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for r in &self.rows {
            if let Some(d) = r.delta_shared {
                let e = m.entry(r.variant.clone()).or_default();
                e.1 += 1;
                if d < 0.0 {
                    e.0 += 1;
                }
            }
        }
        m
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("variant                          below full (seeds)   mean Δ shared CCA\n");
        for (v, (below, n)) in self.below_full() {
            let deltas: Vec<f64> = self.rows.iter().filter(|r| r.variant == v).filter_map(|r| r.delta_shared).collect();
            let mean = deltas.iter().sum::<f64>() / deltas.len().max(1) as f64;
            let _ = writeln!(s, "{v:<32} {below}/{n:<19} {mean:+.4}");
        }
        for r in self.rows.iter().filter(|r| r.error.is_some()) {
            let _ = writeln!(s, "failed: {} seed {}: {}", r.variant, r.seed, r.error.as_deref().unwrap_or(""));
        }
        s
    }
}

/// Trains and evaluates the full model plus every variant on every seed.
/// Completed runs are reused. A failing variant only marks its own rows.
pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    variants: &[AblationSpec],
    seeds: &[u64],
    root: &Path,
    threads: usize,
    opts: &EvalOptions,
) -> Result<AblationTable> {
    let mut all = vec![AblationSpec::full()];
    all.extend(variants.iter().filter(|v| !v.is_full()).cloned());
    cfg.validate()?;
    let (data, bundle) = load_data(&cfg.data)?;
    let jobs: Vec<(usize, u64)> = (0..all.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let results = parallel_map(&jobs, threads, |&(v, seed)| -> Result<RunEval> {
        let vcfg = all[v].apply(cfg)?;
        let dir = train_one(&vcfg, &all[v].name, seed, root, &data, true)?;
        let model = TrainedModel::load(&dir.join("checkpoint_best"))?;
        let held = held_out_trials(&dir, &data)?;
        evaluate_run(&all[v].name, seed, &model, &held, bundle.as_ref(), opts)
    });
    let mut full_cca: HashMap<u64, f64> = HashMap::new();
    let mut table = AblationTable::default();
    for (&(v, seed), res) in jobs.iter().zip(&results) {
        let mut row = AblationRow {
            variant: all[v].name.clone(),
            seed,
            cca_shared: None,
            cca_private: None,
            mse_full: None,
            delta_shared: None,
            error: None,
        };
        match res {
            Ok(ev) => {
                row.cca_shared = ev.recovery.as_ref().map(|r| r.mean_shared);
                row.cca_private = ev.recovery.as_ref().map(|r| r.mean_private);
                row.mse_full = ev
                    .reconstruction
                    .as_ref()
                    .map(|m| m.iter().map(|x| x.full).sum::<f64>() / m.len() as f64);
                if v == 0 {
                    if let Some(c) = row.cca_shared {
                        full_cca.insert(seed, c);
                    }
                }
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        table.rows.push(row);
    }
    for row in &mut table.rows {
        if let (Some(c), Some(f)) = (row.cca_shared, full_cca.get(&row.seed)) {
            row.delta_shared = Some(c - f);
        }
    }
    let dir = root.join("ablations").join(format!("{}-{}", cfg.name, &cfg.content_hash()?[..12]));
    ensure_dir(&dir)?;
    for (name, text) in [("ablation.csv", table.to_csv()), ("ablation.txt", table.to_text())] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| SpireError::io(&p, e))?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub regime: String,
    pub complete: usize,
    pub total: usize,
    pub cca_shared: Option<(f64, f64)>,
    pub cca_private: Option<(f64, f64)>,
    pub mse_full: Option<(f64, f64)>,
    pub incomplete: bool,
}

fn mean_sd(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((m, sd))
}

/// Aggregates eval outputs into one row per regime. Expected regimes come
/// first in the given order and are flagged when missing.
pub fn cmd_report(eval_dirs: &[PathBuf], expected: &[String]) -> Result<(Vec<RegimeRow>, String)> {
    let mut by_regime: BTreeMap<String, Vec<RunEval>> = BTreeMap::new();
    for d in eval_dirs {
        let r: EvalReport = read_json(&d.join(EVAL_JSON))?;
        by_regime.entry(r.dataset.clone()).or_default().extend(r.runs);
    }
    let mut order: Vec<String> = expected.to_vec();
    order.extend(by_regime.keys().filter(|k| !expected.contains(k)).cloned());
    let mut rows = Vec::new();
    for regime in order {
        let runs = by_regime.get(&regime).cloned().unwrap_or_default();
        let ok: Vec<&RunEval> = runs.iter().filter(|r| r.error.is_none()).collect();
        let sh: Vec<f64> = ok.iter().filter_map(|r| r.recovery.as_ref().map(|x| x.mean_shared)).collect();
        let pr: Vec<f64> = ok.iter().filter_map(|r| r.recovery.as_ref().map(|x| x.mean_private)).collect();
        let mse: Vec<f64> = ok
            .iter()
            .filter_map(|r| r.reconstruction.as_ref().map(|m| m.iter().map(|x| x.full).sum::<f64>() / m.len() as f64))
            .collect();
        rows.push(RegimeRow {
            complete: ok.len(),
            total: runs.len(),
            incomplete: runs.is_empty() || ok.len() < runs.len(),
            cca_shared: mean_sd(&sh),
            cca_private: mean_sd(&pr),
            mse_full: mean_sd(&mse),
            regime,
        });
    }
    let f = |v: Option<(f64, f64)>| v.map_or("-".to_string(), |(m, s)| format!("{m:.3} ± {s:.3}"));
    let mut text = String::from("regime      runs    shared CCA        private CCA       full MSE          status\n");
    for r in &rows {
        let _ = writeln!(
            text,
            "{:<11} {:>2}/{:<4} {:<17} {:<17} {:<17} {}",
            r.regime,
            r.complete,
            r.total,
            f(r.cca_shared),
            f(r.cca_private),
            f(r.mse_full),
            if r.incomplete { "incomplete" } else { "ok" }
        );
    }
    Ok((rows, text))
}
