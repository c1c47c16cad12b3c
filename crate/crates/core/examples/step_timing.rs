//! Times one forward/backward step at the synthetic-benchmark scale.

use std::time::Instant;

use ndarray::Array3;
use spire_core::losses::{loss_and_grads, LossWeights};
use spire_core::model::{forward, EncoderDirection, Mode, ModelDims, SpireParams};
use spire_core::rng::substream;

fn main() {
    let dims = ModelDims {
        channels: vec![36, 36],
        hidden: 64,
        d_shared: 3,
        d_private: 3,
        conv_halfwidth: 4,
        dropout: 0.3,
        encoder_direction: EncoderDirection::Forward,
    };
    let p = SpireParams::init(&dims, 0).unwrap();
    let x: Vec<Array3<f64>> = dims
        .channels
        .iter()
        .map(|&c| Array3::from_shape_fn((247, 8, c), |(t, b, k)| ((t * 3 + b + k) as f64 * 0.1).sin()))
        .collect();
    let mut w = LossWeights::reconstruction_only();
    w.cross = 0.05;
    w.self_recon = 0.04;
    w.align = 0.1;
    w.orth = 0.01;
    w.var_sh = 0.005;
    w.var_pr = 0.002;
    let mut rng = substream(0, "bench", 0);
    let reps = 10;
    let start = Instant::now();
    for _ in 0..reps {
        let out = forward(&p, &x, 0.5, Mode::Train(&mut rng)).unwrap();
        let _ = loss_and_grads(&p, &x, &out, &w).unwrap();
    }
    let step = start.elapsed().as_secs_f64() / reps as f64;
    let start = Instant::now();
    for _ in 0..reps {
        let _ = forward(&p, &x, 0.5, Mode::Eval).unwrap();
    }
    let fwd = start.elapsed().as_secs_f64() / reps as f64;
    println!("train step (B=8): {step:.4}s   forward only: {fwd:.4}s");
    println!("≈ epoch (10 train batches + 20 val singles): {:.2}s", 10.0 * step + 20.0 * fwd / 8.0 * 1.5);
}
