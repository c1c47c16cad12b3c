use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::cca::cca_align;
use super::forest::{decode_labels, DecodeResult};
use super::fve::{variance_partition, VariancePartition, DEFAULT_FOLDS};
use super::mmd::{mmd_permutation_test, MmdTest};
use super::recovery::{latent_recovery_from, pooled_observations, reconstruction_report, truncated_ground_truth, LatentRecovery, SubsetMse, TrainedModel};
use crate::error::{Result, SpireError};
use crate::synthgen::{LatentBundle, TrialDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cca,
    Fve,
    Recon,
    Mmd,
    Decode,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Cca, Metric::Fve, Metric::Recon, Metric::Mmd, Metric::Decode];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cca => "cca",
            Metric::Fve => "fve",
            Metric::Recon => "recon",
            Metric::Mmd => "mmd",
            Metric::Decode => "decode",
        }
    }
}

impl FromStr for Metric {
    type Err = SpireError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| SpireError::config("metrics", format!("unknown metric {s:?} (expected cca, fve, recon, mmd or decode)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub metrics: Vec<Metric>,
    pub fve_folds: usize,
    /// `None` uses the relative default strength.
    pub fve_lambda: Option<f64>,
    /// Per-class timepoints kept for MMD, evenly strided.
    pub mmd_max_points: usize,
    pub mmd_permutations: usize,
    pub decode_trees: usize,
    pub decode_train_fraction: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            metrics: vec![Metric::Cca, Metric::Fve, Metric::Recon],
            fve_folds: DEFAULT_FOLDS,
            fve_lambda: None,
            mmd_max_points: 300,
            mmd_permutations: 100,
            decode_trees: 100,
            decode_train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub metric: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdRow {
    pub region: usize,
    pub space: String,
    pub class_a: String,
    pub class_b: String,
    pub test: MmdTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRow {
    pub space: String,
    pub result: DecodeResult,
}

/// Everything computed for one trained run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunEval {
    pub run: String,
    pub seed: u64,
    pub recovery: Option<LatentRecovery>,
    /// Mean canonical correlation of each aligned pair's z̃ against the
    /// target region's ground-truth shared latents.
    pub aligned_recovery: Option<Vec<(usize, usize, f64)>>,
    pub partition: Option<Vec<VariancePartition>>,
    pub reconstruction: Option<Vec<SubsetMse>>,
    pub mmd: Option<Vec<MmdRow>>,
    pub decoding: Option<Vec<DecodeRow>>,
    pub skipped: Vec<Skip>,
    /// Set when the run could not be evaluated at all.
    pub error: Option<String>,
}

impl RunEval {
    pub fn failed(run: impl Into<String>, seed: u64, reason: impl Into<String>) -> Self {
        RunEval {
            run: run.into(),
            seed,
            error: Some(reason.into()),
            ..RunEval::default()
        }
    }

    fn skip(&mut self, metric: Metric, reason: impl Into<String>) {
        self.skipped.push(Skip {
            metric: metric.name().into(),
            reason: reason.into(),
        });
    }
}

fn strided(x: &Array2<f64>, rows: &[usize], cap: usize) -> Array2<f64> {
    let stride = rows.len().div_ceil(cap.max(1)).max(1);
    let picked: Vec<usize> = rows.iter().step_by(stride).copied().collect();
    x.select(Axis(0), &picked)
}

/// Runs the requested metrics on held-out trials. Metric failures are
/// recorded as skips; only model/dataset mismatches are returned as errors.
pub fn evaluate_run(
    run: &str,
    seed: u64,
    model: &TrainedModel,
    dataset: &TrialDataset,
    bundle: Option<&LatentBundle>,
    opts: &EvalOptions,
) -> Result<RunEval> {
    let latents = model.latents(dataset)?;
    let lags = model.model.lags;
    let n_regions = latents.shared.len();
    let mut out = RunEval {
        run: run.into(),
        seed,
        ..RunEval::default()
    };
    let mut metrics = opts.metrics.clone();
    metrics.sort();
    metrics.dedup();
    for metric in metrics {
        match metric {
            Metric::Cca => match bundle {
                None => out.skip(metric, "no ground-truth latents for this dataset"),
                Some(b) => match latent_recovery_from(&latents, b, &dataset.trial_ids, lags) {
                    Ok(rec) => {
                        out.recovery = Some(rec);
                        let mut aligned = Vec::new();
                        for (src, tgt, z) in &latents.aligned {
                            let gt = truncated_ground_truth(&b.shared[*tgt], &dataset.trial_ids, lags);
                            let (n, t, d) = z.dim();
                            let zp = z.to_shape((n * t, d)).expect("contiguous").to_owned();
                            let k = d.min(gt.ncols());
                            aligned.push((*src, *tgt, cca_align(zp.view(), gt.view(), k)?.mean()));
                        }
                        out.aligned_recovery = Some(aligned);
                    }
                    Err(e) => out.skip(metric, e.to_string()),
                },
            },
            Metric::Fve => {
                let ys = pooled_observations(model, dataset)?;
                let parts: Result<Vec<_>> = (0..n_regions)
                    .map(|r| {
                        variance_partition(
                            latents.pooled_shared(r).view(),
                            latents.pooled_private(r).view(),
                            ys[r].view(),
                            opts.fve_lambda,
                            opts.fve_folds,
                        )
                    })
                    .collect();
                match parts {
                    Ok(p) => out.partition = Some(p),
                    Err(e) => out.skip(metric, e.to_string()),
                }
            }
            Metric::Recon => out.reconstruction = Some(reconstruction_report(model, dataset)?),
            Metric::Mmd | Metric::Decode => {
                let Some(labels) = &dataset.labels else {
                    out.skip(metric, "dataset has no trial labels");
                    continue;
                };
                let t = latents.shared[0].len_of(Axis(1));
                let point_labels: Vec<String> = labels.iter().flat_map(|l| std::iter::repeat_n(l.clone(), t)).collect();
                let mut classes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for (i, l) in point_labels.iter().enumerate() {
                    classes.entry(l.as_str()).or_default().push(i);
                }
                if classes.len() < 2 {
                    out.skip(metric, "fewer than two label classes among evaluated trials");
                    continue;
                }
                if metric == Metric::Mmd {
                    let names: Vec<&str> = classes.keys().copied().collect();
                    let mut rows = Vec::new();
                    for r in 0..n_regions {
                        for (space, z) in [("shared", latents.pooled_shared(r)), ("private", latents.pooled_private(r))] {
                            for i in 0..names.len() {
                                for j in i + 1..names.len() {
                                    let xa = strided(&z, &classes[names[i]], opts.mmd_max_points);
                                    let xb = strided(&z, &classes[names[j]], opts.mmd_max_points);
                                    let test = mmd_permutation_test(xa.view(), xb.view(), opts.mmd_permutations, opts.seed)?;
                                    rows.push(MmdRow {
                                        region: r,
                                        space: space.into(),
                                        class_a: names[i].into(),
                                        class_b: names[j].into(),
                                        test,
                                    });
                                }
                            }
                        }
                    }
                    out.mmd = Some(rows);
                } else {
                    let cat = |f: &dyn Fn(usize) -> Array2<f64>| -> Array2<f64> {
                        let parts: Vec<Array2<f64>> = (0..n_regions).map(f).collect();
                        let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
                        concatenate(Axis(1), &views).expect("matching rows")
                    };
                    let sh = cat(&|r| latents.pooled_shared(r));
                    let pr = cat(&|r| latents.pooled_private(r));
                    let mut rows = Vec::new();
                    for (space, x) in [("shared", sh), ("private", pr)] {
                        let result = decode_labels(x.view(), &point_labels, opts.decode_train_fraction, opts.decode_trees, opts.seed)?;
                        rows.push(DecodeRow { space: space.into(), result });
                    }
                    out.decoding = Some(rows);
                }
            }
        }
    }
    Ok(out)
}

/// One flat CSV record: `run, seed, region, metric, value`. Region is
/// `all` for region-free metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub seed: u64,
    pub region: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub dataset: String,
    pub runs: Vec<RunEval>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

impl EvalReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for e in &self.runs {
            let mut push = |region: String, metric: String, value: f64| {
                rows.push(ReportRow {
                    run: e.run.clone(),
                    seed: e.seed,
                    region,
                    metric,
                    value,
                })
            };
            if let Some(rec) = &e.recovery {
                push("all".into(), "cca_shared_mean".into(), rec.mean_shared);
                push("all".into(), "cca_private_mean".into(), rec.mean_private);
                for (i, v) in rec.shared_per_dim.iter().enumerate() {
                    push("all".into(), format!("cca_shared_dim{i}"), *v);
                }
                for (i, v) in rec.private_per_dim.iter().enumerate() {
                    push("all".into(), format!("cca_private_dim{i}"), *v);
                }
                for (r, (sh, pr)) in rec.shared.iter().zip(&rec.private).enumerate() {
                    push(r.to_string(), "cca_shared".into(), sh.mean());
                    push(r.to_string(), "cca_private".into(), pr.mean());
                    for (i, v) in sh.per_dim_pearson.iter().enumerate() {
                        push(r.to_string(), format!("pearson_shared_dim{i}"), *v);
                    }
                }
            }
            if let Some(al) = &e.aligned_recovery {
                for (src, tgt, v) in al {
                    push(tgt.to_string(), format!("cca_aligned_from{src}"), *v);
                }
            }
            if let Some(parts) = &e.partition {
                for (r, p) in parts.iter().enumerate() {
                    for (k, v) in [
                        ("fve_s", p.fve_s),
                        ("fve_p", p.fve_p),
                        ("fve_sp", p.fve_sp),
                        ("unique_shared", p.unique_shared),
                        ("unique_private", p.unique_private),
                        ("redundant", p.redundant),
                    ] {
                        push(r.to_string(), k.into(), v);
                    }
                }
            }
            if let Some(rec) = &e.reconstruction {
                for (r, m) in rec.iter().enumerate() {
                    for (k, v) in [
                        ("mse_full", m.full),
                        ("mse_private_only", m.private_only),
                        ("mse_shared_self", m.shared_self),
                        ("mse_shared_cross", m.shared_cross),
                    ] {
                        push(r.to_string(), k.into(), v);
                    }
                }
            }
            if let Some(mmd) = &e.mmd {
                for m in mmd {
                    let key = format!("mmd_{}_{}_vs_{}", m.space, m.class_a, m.class_b);
                    push(m.region.to_string(), key.clone(), m.test.statistic);
                    push(m.region.to_string(), format!("{key}_p"), m.test.p_value);
                }
            }
            if let Some(dec) = &e.decoding {
                for d in dec {
                    push("all".into(), format!("decode_{}_accuracy", d.space), d.result.accuracy);
                    push("all".into(), format!("decode_{}_baseline", d.space), d.result.majority_baseline);
                }
            }
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("run,seed,region,metric,value\n");
        for r in self.rows() {
            let _ = writeln!(s, "{},{},{},{},{}", r.run, r.seed, r.region, r.metric, r.value);
        }
        s
    }

    /// `(region, metric) -> (mean, sd, n)` over runs, in stable order.
    pub fn aggregate(&self) -> BTreeMap<(String, String), (f64, f64, usize)> {
        let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for r in self.rows() {
            groups.entry((r.region, r.metric)).or_default().push(r.value);
        }
        groups
            .into_iter()
            .map(|(k, v)| {
                let (m, sd) = mean_sd(&v);
                (k, (m, sd, v.len()))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset: {}", self.dataset);
        let _ = writeln!(s, "runs: {}", self.runs.len());
        for e in &self.runs {
            match &e.error {
                Some(err) => {
                    let _ = writeln!(s, "  {} (seed {}): incomplete: {err}", e.run, e.seed);
                }
                None => {
                    let _ = writeln!(s, "  {} (seed {}): ok", e.run, e.seed);
                }
            }
            for k in &e.skipped {
                let _ = writeln!(s, "    skipped {}: {}", k.metric, k.reason);
            }
        }
        let _ = writeln!(s, "\nmean ± sd over runs");
        for ((region, metric), (m, sd, n)) in self.aggregate() {
            let _ = writeln!(s, "  {metric:<32} region {region:<4} {m:>10.4} ± {sd:<8.4} (n={n})");
        }
        s
    }

    /// Mean of one region-free metric over complete runs.
    pub fn mean_of(&self, metric: &str) -> Option<f64> {
        self.aggregate().get(&("all".to_string(), metric.to_string())).map(|v| v.0)
    }
}
