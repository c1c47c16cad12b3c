//! Linear ceiling: ridge from lag-augmented observations to ground-truth
//! latents, scored by held-out CCA.

use ndarray::{concatenate, s, Array2, Axis};
use spire_core::eval::{cca_align, TrainedModel};
use spire_core::synthgen::{generate_preset, Preset};
use spire_core::trainer::{ModelConfig, NormStats, PreparedData};

fn pooled(a: &ndarray::Array3<f64>) -> Array2<f64> {
    let (n, t, d) = a.dim();
    a.as_standard_layout().into_owned().into_shape_with_order((n * t, d)).unwrap()
}

fn ridge_predict(xtr: &Array2<f64>, ytr: &Array2<f64>, xte: &Array2<f64>) -> Array2<f64> {
    let d = xtr.ncols();
    let mut g = xtr.t().dot(xtr);
    let lam = 1e-3 * g.diag().sum() / d as f64;
    for i in 0..d {
        g[[i, i]] += lam;
    }
    let gm = nalgebra::DMatrix::from_fn(d, d, |i, j| g[[i, j]]);
    let inv = gm.try_inverse().unwrap();
    let inv = Array2::from_shape_fn((d, d), |(i, j)| inv[(i, j)]);
    let w = inv.dot(&xtr.t().dot(ytr));
    xte.dot(&w)
}

fn main() {
    let _ = TrainedModel::load;
    for preset in [Preset::D0, Preset::D1, Preset::D2] {
        let (data, b) = generate_preset(preset, 0).unwrap();
        let lags: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(3);
        let norm = NormStats::fit(&data);
        let prep = PreparedData::new(&data, &norm, lags).unwrap();
        let _ = ModelConfig::default();
        let tr: Vec<usize> = (0..80).collect();
        let te: Vec<usize> = (80..100).collect();
        for r in 0..2 {
            let xr = if std::env::var("BOTH").is_ok() { concatenate(Axis(2), &[prep.regions[0].view(), prep.regions[1].view()]).unwrap() } else { prep.regions[r].clone() };
            let xtr = pooled(&xr.select(Axis(0), &tr));
            let xte = pooled(&xr.select(Axis(0), &te));
            for (name, gt) in [("shared", &b.shared[r]), ("private", &b.private[r])] {
                let g = gt.slice(s![.., lags.., ..]).to_owned();
                let ytr = pooled(&g.select(Axis(0), &tr));
                let yte = pooled(&g.select(Axis(0), &te));
                let pred = ridge_predict(&xtr, &ytr, &xte);
                let c = cca_align(pred.view(), yte.view(), 3).unwrap();
                println!("{preset} region {r} {name:<8} linear ceiling CCA {:.3} {:?}", c.mean(), c.correlations.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
            }
        }
    }
}
