//! Trains one seed on a preset and prints runtime and latent recovery.
//! Usage: d1_probe [preset] [seed] [max_epochs]
//! Env knobs: VIC (VICReg coefficient scale), COV, ALIGN, LR, PATIENCE, DROP,
//! HIDDEN, BIDIR, LAGS, PGAIN (private mixing gain), SAVE (run directory).

use std::time::Instant;

use ndarray::{concatenate, Axis};
use spire_core::eval::{cca_align, evaluate_latent_recovery, reconstruction_report, truncated_ground_truth, TrainedModel};
use spire_core::synthgen::{generate, preset_config, Preset, SplitTag};
use spire_core::trainer::{train_with_io, ModelConfig, RunIo, ScheduleTable, TrainConfig};

fn env<T: std::str::FromStr>(k: &str) -> Option<T> {
    std::env::var(k).ok().and_then(|v| v.parse().ok())
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let preset: Preset = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(Preset::D1);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(500);
    let mut gen = preset_config(preset, seed);
    if let Some(g) = env("PGAIN") {
        gen.mixing.private_gain = g;
    }
    let (data, bundle) = generate(&gen, Some(preset)).unwrap();
    let mut model = ModelConfig::default();
    if let Some(d) = env("DROP") {
        model.dropout = d;
    }
    if let Some(h) = env("HIDDEN") {
        model.hidden = h;
    }
    if env::<u8>("BIDIR") == Some(1) {
        model.encoder_direction = spire_core::model::EncoderDirection::Bidirectional;
    }
    if let Some(l) = env("LAGS") {
        model.lags = l;
    }
    let mut config = TrainConfig {
        max_epochs: epochs,
        seed,
        ..TrainConfig::default()
    };
    if let Some(lr) = env("LR") {
        config.learning_rate = lr;
    }
    if let Some(p) = env("PATIENCE") {
        config.plateau_patience = p;
    }
    let mut schedule = ScheduleTable::synthetic();
    if let Some(v) = env::<f64>("VIC") {
        for p in &mut schedule.phases {
            p.weights.vicreg.invariance *= v;
            p.weights.vicreg.variance *= v;
            p.weights.vicreg.covariance *= v;
        }
    }
    if let Some(v) = env::<f64>("COV") {
        for p in &mut schedule.phases {
            p.weights.vicreg.covariance *= v;
        }
    }
    if let Some(v) = env::<f64>("ALIGN") {
        for p in &mut schedule.phases {
            p.weights.align *= v;
        }
    }
    let start = Instant::now();
    let io = std::env::var("SAVE").ok().map(|d| RunIo {
        dir: d.into(),
        checkpoint_every: 0,
        resume: false,
    });
    let out = train_with_io(&data, &model, &schedule, &config, io.as_ref()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    for e in out.history.epochs.iter().step_by(20) {
        println!(
            "epoch {:>3} {:<6} train {:.4} val {:.4} lr {:.1e} | align {:.4} rec {:.4} orth {:.4}",
            e.epoch, e.phase, e.train["total"], e.val_selection, e.lr, e.train["align"], e.train["rec"], e.train["orth"]
        );
    }
    let held = data.select_trials(&out.val_ids, SplitTag::Val);
    let tm = TrainedModel {
        params: out.params.clone(),
        norm: out.norm.clone(),
        model: model.clone(),
    };
    let rec = evaluate_latent_recovery(&tm, &held, Some(&bundle)).unwrap();
    let mse = reconstruction_report(&tm, &held).unwrap();
    println!(
        "shared {:.3} {:?} private {:.3} {:?}",
        rec.mean_shared, rec.shared_per_dim, rec.mean_private, rec.private_per_dim
    );
    let lat = tm.latents(&held).unwrap();
    for r in 0..2 {
        let z = concatenate(Axis(1), &[lat.pooled_shared(r).view(), lat.pooled_private(r).view()]).unwrap();
        let gs = truncated_ground_truth(&bundle.shared[r], &held.trial_ids, 3);
        let gp = truncated_ground_truth(&bundle.private[r], &held.trial_ids, 3);
        let g = concatenate(Axis(1), &[gs.view(), gp.view()]).unwrap();
        let joint = cca_align(z.view(), g.view(), 6).unwrap();
        let leak = cca_align(lat.pooled_shared(r).view(), gp.view(), 3).unwrap();
        println!("region {r}: joint6 {:?} sh-vs-GTpriv {:.3}", joint.correlations.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(), leak.mean());
        println!("region {r}: recon {:?}", mse[r]);
    }
    let agree = cca_align(lat.pooled_shared(0).view(), lat.pooled_shared(1).view(), 3).unwrap();
    println!("z_sh r0 vs r1 CCA {:?}", agree.correlations);
    println!(
        "{} epochs in {secs:.1}s ({:.2}s/epoch), best {:?}",
        out.history.epochs.len(),
        secs / out.history.epochs.len() as f64,
        out.best_epoch
    );
}
