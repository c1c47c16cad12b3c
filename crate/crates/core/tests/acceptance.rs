//! Acceptance suite: one pass/fail line per criterion, printed straight to
//! stderr so it shows up without `--nocapture`. Training runs are cached
//! under `$SPIRE_ACCEPTANCE_DIR` (default: cargo's target tmpdir) and reused
//! when their configuration hash matches; delete the directory to retrain.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};
use spire_core::eval::{
    evaluate_run, fve, mmd_permutation_test, mmd_unbiased, variance_partition, EvalOptions, Metric, RunEval, TrainedModel,
    VariancePartition,
};
use spire_core::experiment::{cmd_generate, cmd_train, held_out_trials, load_data, train_one, AblationSpec, DataSpec, ExperimentConfig, RunMeta};
use spire_core::losses::{
    convalign_reg_loss, mapper_identity_loss, orthogonality_loss, recon_loss, total_loss, variance_guard_losses, vicreg,
    LossTerm, VicregCoefficients,
};
use spire_core::model::{forward, Mode};
use spire_core::synthgen::{
    add_structured_noise, bipolar_rereference, generate_preset, oscillator_series, ElectrodeGeometry, NoiseConfig,
    OscillatorConfig, Preset,
};

type Outcome = Result<String, String>;

fn say(line: &str) {
    let mut e = std::io::stderr().lock();
    let _ = writeln!(e, "{line}");
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn randn(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

// ----- 1: loss oracles ------------------------------------------------------

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut worst_term = "";
    let mut note = |name: &'static str, got: f64, want: f64| {
        let e = rel_err(got, want);
        if e > worst {
            worst = e;
            worst_term = name;
        }
    };
    let instances = 120;
    for _ in 0..instances {
        let (t, b, c) = (rng.random_range(2..9), rng.random_range(1..4), rng.random_range(1..5));
        let x = Array3::from_shape_simple_fn((t, b, c), || randn(&mut rng));
        let y = Array3::from_shape_simple_fn((t, b, c), || randn(&mut rng));
        note("rec", recon_loss(x.view(), y.view()).unwrap(), naive_mse(&x, &y));

        let (n, d) = (rng.random_range(4..40), rng.random_range(1..5));
        let za = Array2::from_shape_simple_fn((n, d), || 2.0 * randn(&mut rng));
        let zb = Array2::from_shape_simple_fn((n, d), || 0.3 * randn(&mut rng));
        let coef = VicregCoefficients {
            invariance: rng.random_range(0.0..2.0),
            variance: rng.random_range(0.0..2.0),
            covariance: rng.random_range(0.0..2.0),
        };
        note("align", vicreg(za.view(), zb.view(), &coef).unwrap(), naive_vicreg(&za, &zb, &coef));
        let dp = rng.random_range(1..5);
        let zp = Array2::from_shape_simple_fn((n, dp), || randn(&mut rng));
        note("orth", orthogonality_loss(za.view(), zp.view()).unwrap(), naive_orth(&za, &zp));
        let tau = rng.random_range(0.1..3.0);
        let (vs, vp) = variance_guard_losses(za.view(), zp.view(), tau).unwrap();
        let (ns, np) = naive_var_guards(&za, &zp, tau);
        note("var_sh", vs, ns);
        if np > 0.0 {
            note("var_pr", vp, np);
        } else if vp != 0.0 {
            note("var_pr", vp + 1.0, 1.0);
        }
        let m = Array2::from_shape_simple_fn((d, d), || randn(&mut rng));
        note("mapid", mapper_identity_loss(&[m.view()]).unwrap(), naive_mapid(&m));
        let k = Array2::from_shape_simple_fn((d, 2 * rng.random_range(0..4) + 1), || randn(&mut rng));
        note("align_reg", convalign_reg_loss(&[k.view()]).unwrap(), naive_align_reg(&k));
    }
    // cross, self and the weighted total on random tiny models
    for i in 0..instances as u64 {
        let dims = tiny_dims();
        let p = perturbed_params(&dims, 1000 + i);
        let x = random_inputs(&dims, 5 + (i as usize % 4), 1 + (i as usize % 3), 2000 + i);
        let out = forward(&p, &x, 0.5, Mode::Eval).unwrap();
        let w = all_weights();
        let br = total_loss(&p, &x, &out, &w).unwrap();
        let cross: f64 = out.pairs.iter().map(|pf| naive_mse(&x[pf.target], &pf.cross.x_hat)).sum();
        let own: f64 = out.regions.iter().zip(&x).map(|(rf, xr)| naive_mse(xr, &rf.self_only.x_hat)).sum();
        let rec: f64 = out.regions.iter().zip(&x).map(|(rf, xr)| naive_mse(xr, &rf.full.x_hat)).sum();
        note("cross", br.get(LossTerm::Cross), cross);
        note("self", br.get(LossTerm::SelfRecon), own);
        note("rec(model)", br.get(LossTerm::Rec), rec);
        let total: f64 = LossTerm::ALL.iter().map(|&t| w.lambda(t) * br.get(t)).sum();
        note("total", br.total, total);
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && secs < 60.0,
        format!("{instances} instances per term, worst relative error {worst:.2e} ({worst_term}), {secs:.1}s"),
    )
}

// ----- 2: gradients ---------------------------------------------------------

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let dims = tiny_dims();
    let p = perturbed_params(&dims, 3);
    let x = random_inputs(&dims, 8, 2, 17);
    let report = gradient_check(&p, &x, 0.6, &all_weights(), 1e-5);
    let (name, worst) = report
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .cloned()
        .unwrap();
    let groups = report.len();
    let has_aligners = report.iter().any(|(n, _)| n.contains("kernel")) && report.iter().any(|(n, _)| n.contains("mapper"));
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-4 && has_aligners && secs < 120.0,
        format!("{groups} parameter tensors incl. kernels/mappers={has_aligners}, worst {worst:.2e} ({name}), {secs:.1}s"),
    )
}

// ----- 3: generator properties ---------------------------------------------

fn naive_periodogram(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n / 2 + 1)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im) / n as f64
        })
        .collect()
}

fn lag1(x: &Array1<f64>) -> f64 {
    let m = x.mean().unwrap();
    let num: f64 = (0..x.len() - 1).map(|t| (x[t] - m) * (x[t + 1] - m)).sum();
    let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    num / den
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // (a) dyadic values keep every sum exact, so equality is bitwise
    let g = ElectrodeGeometry::new("r", 3, 4);
    let dy = |rng: &mut ChaCha8Rng| rng.random_range(-512i32..512) as f64 / 64.0;
    let base = Array3::from_shape_fn((4, 50, 12), |_| dy(&mut rng));
    let mut shifted = base.clone();
    for n in 0..4 {
        for t in 0..50 {
            for row in 0..3 {
                let c = dy(&mut rng);
                for k in 0..4 {
                    shifted[[n, t, row * 4 + k]] += c;
                }
            }
        }
    }
    let cmr = bipolar_rereference(&base, &g).unwrap() == bipolar_rereference(&shifted, &g).unwrap();

    // (b) 1/f slope from a direct DFT over 2..100 Hz, averaged over 60 trials
    let zeros = Array3::zeros((60, 250, 8));
    let cfg = NoiseConfig {
        one_over_f_scale: 1.0,
        ..NoiseConfig::default()
    };
    let noisy = add_structured_noise(&zeros, &ElectrodeGeometry::new("r", 2, 4), &cfg, 21, 0).unwrap();
    let mut psd = vec![0.0; 126];
    for n in 0..60 {
        let x: Vec<f64> = noisy.slice(s![n, .., 3]).to_vec();
        for (a, b) in psd.iter_mut().zip(naive_periodogram(&x)) {
            *a += b / 60.0;
        }
    }
    let pts: Vec<(f64, f64)> = (1..126)
        .map(|k| (k as f64 * 500.0 / 250.0, psd[k]))
        .filter(|(f, _)| (2.0..=100.0).contains(f))
        .map(|(f, p)| (f.log10(), p.log10()))
        .collect();
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64,
        pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64,
    );
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();

    // (c) lag-1 autocorrelation of the AR(1) stage at the D1 coefficient
    let d1 = spire_core::synthgen::preset_config(Preset::D1, 0);
    let rho = d1.latent_dynamics.ar_coefficient;
    let ar_cfg = OscillatorConfig {
        oscillator_amplitude: 0.0,
        burst_prob: 0.0,
        jump_prob: 0.0,
        ar_noise_std: 1.0,
        standardize: false,
        ..d1.latent_dynamics.clone()
    };
    let mut acc = 0.0;
    for trial in 0..100 {
        let mut r = spire_core::rng::substream(77, "ar", trial);
        acc += lag1(&oscillator_series(&ar_cfg, 250, 500.0, &mut r).0);
    }
    let ac = acc / 100.0;

    // (d) windowed cross-correlation between the two regions' shared latents
    let (_, b) = generate_preset(Preset::D2, 0).unwrap();
    let (a0, a1) = (&b.shared[0], &b.shared[1]);
    let (n, t, d) = a0.dim();
    let (win, max_lag) = (40usize, 6i64);
    let mut estimates = Vec::new();
    let mut truth = Vec::new();
    let mut c0 = win / 2 + max_lag as usize;
    while c0 + win / 2 + max_lag as usize <= t {
        let mut best = (f64::NEG_INFINITY, 0i64);
        for k in -max_lag..=max_lag {
            let mut sum = 0.0;
            for trial in 0..n {
                for j in 0..d {
                    let xs: Vec<f64> = (c0 - win / 2..c0 + win / 2).map(|tt| a1[[trial, tt, j]]).collect();
                    let ys: Vec<f64> = (c0 - win / 2..c0 + win / 2).map(|tt| a0[[trial, (tt as i64 - k) as usize, j]]).collect();
                    let (mx, my) = (xs.iter().sum::<f64>() / win as f64, ys.iter().sum::<f64>() / win as f64);
                    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
                    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
                    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
                    sum += sxy / (sxx * syy).sqrt().max(1e-12);
                }
            }
            if sum > best.0 {
                best = (sum, k);
            }
        }
        estimates.push(best.1 as f64);
        truth.push(3.0 * (2.0 * std::f64::consts::PI * c0 as f64 / 250.0).sin());
        c0 += 5;
    }
    let peak = estimates.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let corr = {
        let (me, mt) = (
            estimates.iter().sum::<f64>() / estimates.len() as f64,
            truth.iter().sum::<f64>() / truth.len() as f64,
        );
        let sxy: f64 = estimates.iter().zip(&truth).map(|(e, t)| (e - me) * (t - mt)).sum();
        let sxx: f64 = estimates.iter().map(|e| (e - me).powi(2)).sum();
        let syy: f64 = truth.iter().map(|t| (t - mt).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    };
    let secs = start.elapsed().as_secs_f64();
    check(
        cmr && (slope + 1.0).abs() <= 0.3 && (ac - rho).abs() <= 0.05 && (peak - 3.0).abs() <= 1.0 && corr > 0.8 && secs < 300.0,
        format!(
            "CMR exact {cmr}; 1/f slope {slope:.3}; lag-1 autocorr {ac:.3} vs rho {rho}; D2 lag peak {peak} (trace corr {corr:.2}); {secs:.1}s"
        ),
    )
}

// ----- 8: variance partition -----------------------------------------------

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 4000;
    let noise = 0.5;
    let z_sh = Array2::from_shape_simple_fn((n, 3), || randn(&mut rng));
    let z_pr = Array2::from_shape_simple_fn((n, 3), || randn(&mut rng));
    let w = Array2::from_shape_simple_fn((3, 5), || randn(&mut rng));
    let signal = z_sh.dot(&w);
    let y = &signal + &Array2::from_shape_simple_fn((n, 5), || noise * randn(&mut rng));
    // construction value: pooled signal share of total variance
    let sig_var: f64 = w.iter().map(|v| v * v).sum();
    let truth = sig_var / (sig_var + 5.0 * noise * noise);
    let a = variance_partition(z_sh.view(), z_pr.view(), y.view(), None, 5).unwrap();
    let ok_a = (a.unique_shared - truth).abs() <= 0.05 && a.unique_private <= 0.05 && a.redundant <= 0.05;
    let b = variance_partition(z_sh.view(), z_sh.view(), y.view(), None, 5).unwrap();
    let ok_b = (b.redundant - truth).abs() <= 0.05
        && (b.redundant - b.fve_s).abs() <= 0.05
        && b.unique_shared <= 0.05
        && b.unique_private <= 0.05;
    let mut ok_c = true;
    for i in 0..2000 {
        let (s, p, sp) = if i % 4 == 0 {
            let s = rng.random_range(0.0..0.4);
            let p = rng.random_range(0.0..0.4);
            (s, p, s + p + rng.random_range(0.0..0.2))
        } else {
            (rng.random_range(-0.5..1.0), rng.random_range(-0.5..1.0), rng.random_range(-0.5..1.0))
        };
        let v = VariancePartition::from_fves(s, p, sp);
        ok_c &= v.unique_shared == (sp - p).max(0.0) && v.unique_private == (sp - s).max(0.0) && v.redundant == (s + p - sp).max(0.0);
    }
    let _ = fve;
    check(
        ok_a && ok_b && ok_c,
        format!(
            "shared-only: US {:.3} vs {truth:.3}, UP {:.3}, R {:.3}; duplicated: R {:.3} vs FVE_S {:.3}; clipping identities exact {ok_c}",
            a.unique_shared, a.unique_private, a.redundant, b.redundant, b.fve_s
        ),
    )
}

// ----- 9: MMD ---------------------------------------------------------------

fn brute_mmd(x: &Array2<f64>, y: &Array2<f64>, sigma: f64) -> f64 {
    let k = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
        let mut d2 = 0.0;
        for i in 0..a.len() {
            d2 += (a[i] - b[i]) * (a[i] - b[i]);
        }
        (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let (m, n) = (x.nrows(), y.nrows());
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                sxx += k(x.row(i), x.row(j));
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                syy += k(y.row(i), y.row(j));
            }
        }
    }
    for i in 0..m {
        for j in 0..n {
            sxy += k(x.row(i), y.row(j));
        }
    }
    sxx / (m * (m - 1)) as f64 + syy / (n * (n - 1)) as f64 - 2.0 * sxy / (m * n) as f64
}

fn brute_median(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let pooled = ndarray::concatenate(Axis(0), &[x.view(), y.view()]).unwrap();
    let mut d = Vec::new();
    for i in 0..pooled.nrows() {
        for j in i + 1..pooled.nrows() {
            d.push((&pooled.row(i) - &pooled.row(j)).mapv(|v| v * v).sum().sqrt());
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = d.len() / 2;
    if d.len() % 2 == 0 {
        0.5 * (d[h - 1] + d[h])
    } else {
        d[h]
    }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x = Array2::from_shape_simple_fn((50, 3), || randn(&mut rng));
        let y = Array2::from_shape_simple_fn((50, 3), || randn(&mut rng) + 0.3);
        let sigma = rng.random_range(0.5..3.0);
        worst = worst.max(rel_err(mmd_unbiased(x.view(), y.view(), Some(sigma)).unwrap(), brute_mmd(&x, &y, sigma)));
        let med = brute_median(&x, &y);
        worst = worst.max(rel_err(mmd_unbiased(x.view(), y.view(), None).unwrap(), brute_mmd(&x, &y, med)));
    }
    let x = Array2::from_shape_simple_fn((500, 3), || randn(&mut rng));
    let y = Array2::from_shape_simple_fn((500, 3), || randn(&mut rng));
    let same = mmd_permutation_test(x.view(), y.view(), 200, 1).unwrap();
    let z = Array2::from_shape_simple_fn((500, 3), || randn(&mut rng) + 0.5);
    let shifted = mmd_permutation_test(x.view(), z.view(), 200, 2).unwrap();
    let q99 = shifted.null_quantile(0.99);
    check(
        worst <= 1e-8 && same.statistic.abs() < 3.0 * same.null_sd() && shifted.statistic > q99,
        format!(
            "brute-force rel err {worst:.1e}; same-dist {:.2e} vs 3 null SD {:.2e}; shifted {:.2e} > q99 {q99:.2e}",
            same.statistic,
            3.0 * same.null_sd(),
            shifted.statistic
        ),
    )
}

// ----- 10: determinism ------------------------------------------------------

const REFERENCE_DATASET_SHA256: &str = "d705905c8f07b8d457b32ce0ee166a2b5ef609b229d016675f9480ff16538a0a";
const REFERENCE_HISTORY_SHA256: &str = "d7003ff8dbd309e1281d7983b7f5e873621e2c99c94d5b70ef61a0f1cc538256";

fn dir_digest(dir: &Path) -> String {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.file_name().unwrap().to_string_lossy().as_bytes());
        h.update(std::fs::read(&f).unwrap());
    }
    hex::encode(h.finalize())
}

fn tiny_experiment(data: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.name = "determinism".into();
    cfg.data = DataSpec {
        path: Some(data.to_path_buf()),
        ..DataSpec::default()
    };
    cfg.model.hidden = 8;
    cfg.train.max_epochs = 3;
    cfg.train.early_stop_warmup = 1;
    cfg.checkpoint_every = 1;
    let mut table = spire_core::trainer::ScheduleTable::synthetic();
    table.phases.truncate(1);
    table.gate_ramp = Some((0, 2));
    table.freeze_window = Some((1, 2));
    cfg.schedule = spire_core::experiment::ScheduleSpec::Table(table);
    cfg
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cmd_generate(Preset::D1, 0, &a).unwrap();
    cmd_generate(Preset::D1, 0, &b).unwrap();
    let (da, db) = (dir_digest(&a), dir_digest(&b));
    let mut hist = Vec::new();
    for root in ["ra", "rb"] {
        let cfg = tiny_experiment(&a);
        let runs = cmd_train(&cfg, &AblationSpec::full(), &[0], &tmp.path().join(root), false, 1).unwrap();
        let dir = runs[0].1.as_ref().unwrap().clone();
        hist.push(hex::encode(Sha256::digest(std::fs::read(dir.join("history.jsonl")).unwrap())));
    }
    say(&format!("    dataset sha256 {da}\n    history sha256 {}", hist[0]));
    check(
        da == db && hist[0] == hist[1] && da == REFERENCE_DATASET_SHA256 && hist[0] == REFERENCE_HISTORY_SHA256,
        format!(
            "reruns identical: dataset {}, history {}; reference match: dataset {}, history {}",
            da == db,
            hist[0] == hist[1],
            da == REFERENCE_DATASET_SHA256,
            hist[0] == REFERENCE_HISTORY_SHA256
        ),
    )
}

// ----- training-based criteria ---------------------------------------------

const SEEDS: [u64; 4] = [0, 1, 2, 3];

fn cache_root() -> PathBuf {
    std::env::var_os("SPIRE_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

struct Trained {
    eval: RunEval,
    seconds: f64,
}

fn benchmark_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.toml");
    ExperimentConfig::load(&path).expect("benchmark config")
}

fn bench(preset: Preset, variant: &str, seed: u64) -> Trained {
    let mut cfg = benchmark_config();
    cfg.data = DataSpec {
        preset: Some(preset.name().into()),
        seed: 0,
        path: None,
    };
    let spec = AblationSpec::parse(variant).unwrap();
    let cfg = spec.apply(&cfg).unwrap();
    let (data, bundle) = load_data(&cfg.data).unwrap();
    let dir = train_one(&cfg, variant, seed, &cache_root(), &data, true).unwrap();
    let seconds = RunMeta::load(&dir).unwrap().train_seconds.unwrap_or(f64::NAN);
    let model = TrainedModel::load(&dir.join("checkpoint_best")).unwrap();
    let held = held_out_trials(&dir, &data).unwrap();
    let opts = EvalOptions {
        metrics: vec![Metric::Cca, Metric::Recon],
        ..EvalOptions::default()
    };
    let eval = evaluate_run(variant, seed, &model, &held, bundle.as_ref(), &opts).unwrap();
    say(&format!(
        "    [{preset} {variant} seed {seed}] shared {:.3} private {:.3} ({seconds:.0}s)",
        eval.recovery.as_ref().unwrap().mean_shared,
        eval.recovery.as_ref().unwrap().mean_private
    ));
    Trained { eval, seconds }
}

fn shared(t: &Trained) -> f64 {
    t.eval.recovery.as_ref().unwrap().mean_shared
}

fn private(t: &Trained) -> f64 {
    t.eval.recovery.as_ref().unwrap().mean_private
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

struct Runs {
    d1: Vec<Trained>,
}

fn criterion_4(runs: &Runs) -> Outcome {
    let sh = mean(runs.d1.iter().map(shared));
    let pr = mean(runs.d1.iter().map(private));
    let per_dim: Vec<String> = (0..3)
        .map(|k| format!("{:.2}", mean(runs.d1.iter().map(|t| t.eval.recovery.as_ref().unwrap().shared_per_dim[k]))))
        .collect();
    let minutes = runs.d1.iter().map(|t| t.seconds).sum::<f64>() / 60.0;
    check(
        sh >= 0.75 && pr >= 0.60 && minutes <= 45.0,
        format!(
            "D1 over 4 seeds: shared CCA {sh:.3} (per dim {}), private {pr:.3}; training {minutes:.1} min",
            per_dim.join("/")
        ),
    )
}

fn criterion_5(runs: &Runs) -> Outcome {
    let d0 = mean(SEEDS.iter().map(|&s| shared(&bench(Preset::D0, "SPIRE_synth", s))));
    let d1 = mean(runs.d1.iter().map(shared));
    let d2 = mean(SEEDS.iter().map(|&s| shared(&bench(Preset::D2, "SPIRE_synth", s))));
    check(
        d0 >= d1 && d1 >= d2 - 0.05,
        format!("mean shared CCA D0 {d0:.3}, D1 {d1:.3}, D2 {d2:.3}"),
    )
}

fn criterion_6(runs: &Runs) -> Outcome {
    let mut below = 0;
    let mut pairs = Vec::new();
    for (full, &s) in runs.d1.iter().zip(&SEEDS) {
        let abl = shared(&bench(Preset::D1, "abl_no_w_align", s));
        if abl < shared(full) {
            below += 1;
        }
        pairs.push(format!("{:.3}/{:.3}", abl, shared(full)));
    }
    check(below >= 3, format!("abl_no_w_align below full in {below}/4 seeds (ablated/full: {})", pairs.join(", ")))
}

fn criterion_7(runs: &Runs) -> Outcome {
    let mut ok = true;
    let mut worst = String::new();
    for t in &runs.d1 {
        for (r, m) in t.eval.reconstruction.as_ref().unwrap().iter().enumerate() {
            let good = m.full < m.shared_self && m.shared_self < m.private_only;
            if !good && worst.is_empty() {
                worst = format!(
                    "; seed {} region {r}: full {:.3} self {:.3} private {:.3}",
                    t.eval.seed, m.full, m.shared_self, m.private_only
                );
            }
            ok &= good;
        }
    }
    let avg = |f: fn(&spire_core::eval::SubsetMse) -> f64| {
        mean(runs.d1.iter().flat_map(|t| t.eval.reconstruction.as_ref().unwrap().iter().map(f).collect::<Vec<_>>()))
    };
    check(
        ok,
        format!(
            "full < shared-self < private-only in every seed/region: {ok} (means {:.3} < {:.3} < {:.3}){worst}",
            avg(|m| m.full),
            avg(|m| m.shared_self),
            avg(|m| m.private_only)
        ),
    )
}

fn run(label: &str, f: impl FnOnce() -> Outcome + std::panic::UnwindSafe) -> bool {
    let result = std::panic::catch_unwind(f).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    say(&format!("criterion {label:>2} | {tag} | {detail}"));
    result.is_ok()
}

fn main() {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: &str| only.is_empty() || only.iter().any(|o| o == n);
    let mut results = Vec::new();
    for (n, f) in [
        ("1", criterion_1 as fn() -> Outcome),
        ("2", criterion_2),
        ("3", criterion_3),
        ("8", criterion_8),
        ("9", criterion_9),
        ("10", criterion_10),
    ] {
        if wanted(n) {
            results.push(run(n, f));
        }
    }
    if ["4", "5", "6", "7"].iter().any(|n| wanted(n)) {
        say(&format!("training runs cached under {}", cache_root().display()));
        let runs = std::panic::catch_unwind(|| Runs {
            d1: SEEDS.iter().map(|&s| bench(Preset::D1, "SPIRE_synth", s)).collect(),
        });
        match runs {
            Ok(runs) => {
                for (n, f) in [
                    ("4", criterion_4 as fn(&Runs) -> Outcome),
                    ("7", criterion_7),
                    ("6", criterion_6),
                    ("5", criterion_5),
                ] {
                    if wanted(n) {
                        results.push(run(n, std::panic::AssertUnwindSafe(|| f(&runs))));
                    }
                }
            }
            Err(_) => {
                for n in ["4", "5", "6", "7"] {
                    if wanted(n) {
                        say(&format!("criterion {n:>2} | FAIL | D1 benchmark training failed"));
                        results.push(false);
                    }
                }
            }
        }
    }
    let passed = results.iter().filter(|r| **r).count();
    say(&format!("acceptance: {passed}/{} criteria passed", results.len()));
    // failures are reported above; a non-zero exit is opt-in so the rest of the workspace still runs
    if passed != results.len() && std::env::var_os("SPIRE_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
