//! Diagnostics for a saved run: latent correlation spectrum, per-dimension
//! linear explainability from ground truth, and time-smeared recovery.
//! Usage: latent_diag <run_dir> [preset] [data_seed]

use ndarray::{concatenate, s, Array2, Axis};
use spire_core::eval::{cca_align, truncated_ground_truth, TrainedModel};
use spire_core::synthgen::{generate, preset_config, Preset, SplitTag};
use spire_core::trainer::{load_checkpoint, CHECKPOINT_MANIFEST};

fn corr_eigs(z: &Array2<f64>) -> Vec<f64> {
    let n = z.nrows() as f64;
    let m = z.mean_axis(Axis(0)).unwrap();
    let c = &(z - &m);
    let sd = c.mapv(|v| v * v).mean_axis(Axis(0)).unwrap().mapv(f64::sqrt);
    let c = c / &sd;
    let r = c.t().dot(&c) / n;
    let d = r.nrows();
    let e = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_fn(d, d, |i, j| r[[i, j]]));
    let mut v: Vec<f64> = e.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

fn r2(y: &Array2<f64>, x: &Array2<f64>) -> Vec<f64> {
    let xm = x.mean_axis(Axis(0)).unwrap();
    let xc = x - &xm;
    let ym = y.mean_axis(Axis(0)).unwrap();
    let yc = y - &ym;
    let d = xc.ncols();
    let mut g = xc.t().dot(&xc);
    for i in 0..d {
        g[[i, i]] += 1e-6 * g[[i, i]].max(1e-12);
    }
    let gi = nalgebra::DMatrix::from_fn(d, d, |i, j| g[[i, j]]).try_inverse().unwrap();
    let gi = Array2::from_shape_fn((d, d), |(i, j)| gi[(i, j)]);
    let w = gi.dot(&xc.t().dot(&yc));
    let res = &yc - &xc.dot(&w);
    (0..y.ncols())
        .map(|j| 1.0 - res.column(j).mapv(|v| v * v).sum() / yc.column(j).mapv(|v| v * v).sum())
        .collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dir = std::path::PathBuf::from(&args[1]);
    let preset: Preset = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(Preset::D1);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);
    let mut gen = preset_config(preset, seed);
    if let Some(g) = std::env::var("PGAIN").ok().and_then(|v| v.parse().ok()) {
        gen.mixing.private_gain = g;
    }
    let (data, b) = generate(&gen, Some(preset)).unwrap();
    let ck: spire_core::trainer::CheckpointManifest =
        spire_core::container::read_json(&dir.join("checkpoint_last").join(CHECKPOINT_MANIFEST)).unwrap();
    let val = ck.state.unwrap().val_ids;
    let _ = load_checkpoint;
    let held = data.select_trials(&val, SplitTag::Val);
    let tm = TrainedModel::load(&dir.join("checkpoint_best")).unwrap();
    let lags = tm.model.lags;
    let lat = tm.latents(&held).unwrap();
    let (n, t, _) = lat.shared[0].dim();
    let f = |a: &Array2<f64>| a.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ");
    for r in 0..2 {
        let z = concatenate(Axis(1), &[lat.pooled_shared(r).view(), lat.pooled_private(r).view()]).unwrap();
        let gs = truncated_ground_truth(&b.shared[r], &held.trial_ids, lags);
        let gp = truncated_ground_truth(&b.private[r], &held.trial_ids, lags);
        let g = concatenate(Axis(1), &[gs.view(), gp.view()]).unwrap();
        println!("region {r}");
        println!("  shared eigs {:?} private eigs {:?}", corr_eigs(&lat.pooled_shared(r)), corr_eigs(&lat.pooled_private(r)));
        let zs = lat.pooled_shared(r);
        let zc = &zs - &zs.mean_axis(Axis(0)).unwrap();
        let cov = zc.t().dot(&zc) / (zs.nrows() - 1) as f64;
        println!("  shared cov {:.3}", cov);
        println!("  latent corr eigs {:?}", corr_eigs(&z).iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>());
        println!("  R2 of each latent dim from GT6: {}", f(&Array2::from_shape_vec((1, 6), r2(&z, &g)).unwrap()));
        println!("  R2 of each GT dim from z6:      {}", f(&Array2::from_shape_vec((1, 6), r2(&g, &z)).unwrap()));
        // time-smeared: GT(t) from z(t-k..t+k)
        for k in [5usize, 15] {
            let zt = z.as_standard_layout().to_owned().into_shape_with_order((n, t, 6)).unwrap();
            let mut feats = Vec::new();
            for sh in 0..=2 * k {
                feats.push(zt.slice(s![.., sh..t - 2 * k + sh, ..]).to_owned());
            }
            let views: Vec<_> = feats.iter().map(|a| a.view()).collect();
            let big = concatenate(Axis(2), &views).unwrap();
            let tt = t - 2 * k;
            let big = big.as_standard_layout().to_owned().into_shape_with_order((n * tt, 6 * (2 * k + 1))).unwrap();
            let gt = g.as_standard_layout().to_owned().into_shape_with_order((n, t, 6)).unwrap().slice(s![.., k..t - k, ..]).to_owned().into_shape_with_order((n * tt, 6)).unwrap();
            println!("  R2 of GT dims from z window ±{k}: {}", f(&Array2::from_shape_vec((1, 6), r2(&gt, &big)).unwrap()));
        }
        // shared latents against polynomial features of the shared truth
        let d = gs.ncols();
        let mut cols = vec![gs.clone()];
        for i in 0..d {
            for j in i..d {
                let p = (&gs.column(i) * &gs.column(j)).insert_axis(Axis(1));
                cols.push(p.to_owned());
            }
            cols.push(gs.column(i).mapv(|v| v.powi(3)).insert_axis(Axis(1)));
        }
        let views: Vec<_> = cols.iter().map(|a| a.view()).collect();
        let poly = concatenate(Axis(1), &views).unwrap();
        let zs = lat.pooled_shared(r);
        println!("  R2 of shared dims from GT shared (linear): {}", f(&Array2::from_shape_vec((1, 3), r2(&zs, &gs)).unwrap()));
        println!("  R2 of shared dims from GT shared (cubic):  {}", f(&Array2::from_shape_vec((1, 3), r2(&zs, &poly)).unwrap()));
        {
            let k = 10usize;
            let g3 = gs.as_standard_layout().to_owned().into_shape_with_order((n, t, 3)).unwrap();
            let mut feats = Vec::new();
            for sh in 0..=2 * k {
                feats.push(g3.slice(s![.., sh..t - 2 * k + sh, ..]).to_owned());
            }
            let views: Vec<_> = feats.iter().map(|a| a.view()).collect();
            let tt = t - 2 * k;
            let big = concatenate(Axis(2), &views).unwrap().as_standard_layout().to_owned().into_shape_with_order((n * tt, 3 * (2 * k + 1))).unwrap();
            let z3 = zs.as_standard_layout().to_owned().into_shape_with_order((n, t, 3)).unwrap().slice(s![.., k..t - k, ..]).to_owned().into_shape_with_order((n * tt, 3)).unwrap();
            println!("  R2 of shared dims from GT shared window ±{k}: {}", f(&Array2::from_shape_vec((1, 3), r2(&z3, &big)).unwrap()));
        }
        let c = cca_align(lat.pooled_shared(r).view(), gs.view(), 3).unwrap();
        println!("  shared CCA {:?}", c.correlations);
    }
}
