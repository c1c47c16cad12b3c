use serde::{Deserialize, Serialize};

use crate::model::{ParamKind, SpireParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter layout.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: SpireParams,
    pub v: SpireParams,
    pub step: u64,
}

impl Adam {
    pub fn new(params: &SpireParams, config: AdamConfig) -> Self {
        Adam {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// One update. Tensors whose kind is in `skip` are left untouched,
    /// moments included.
    pub fn update(&mut self, params: &mut SpireParams, grads: &SpireParams, lr: f64, skip: &[ParamKind]) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let step_size = lr / bc1;
        let it = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((mut p, g), mut m), mut v) in it {
            if skip.contains(&p.kind) {
                continue;
            }
            ndarray::Zip::from(&mut p.value)
                .and(&g.value)
                .and(&mut m.value)
                .and(&mut v.value)
                .for_each(|p, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= step_size * *m / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}

/// Zeroes the gradients of the given kinds.
pub fn zero_kinds(grads: &mut SpireParams, kinds: &[ParamKind]) {
    for mut t in grads.tensors_mut() {
        if kinds.contains(&t.kind) {
            t.value.fill(0.0);
        }
    }
}

/// Rescales `grads` so the global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut SpireParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / (norm + 1e-12));
    }
    norm
}

/// Multiplies the learning rate by `factor` once the monitored value has
/// failed to improve (relative threshold 1e-4) for more than `patience`
/// consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            factor,
            patience,
            threshold: 1e-4,
            best: f64::MAX,
            bad_epochs: 0,
        }
    }

    /// Returns the new learning rate.
    pub fn step(&mut self, value: f64, lr: f64) -> f64 {
        if value < self.best * (1.0 - self.threshold) {
            self.best = value;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}

/// Counts consecutive non-improving epochs, ignoring everything before
/// `warmup`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub warmup: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, warmup: usize) -> Self {
        EarlyStopping {
            patience,
            warmup,
            best: f64::MAX,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    /// Records one epoch. Returns `(improved, stop)`.
    pub fn step(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        if epoch < self.warmup {
            return (false, false);
        }
        if value < self.best {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            (true, false)
        } else {
            self.bad_epochs += 1;
            (false, self.bad_epochs >= self.patience)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderDirection, ModelDims};

    fn params() -> SpireParams {
        let dims = ModelDims {
            channels: vec![2, 2],
            hidden: 3,
            d_shared: 1,
            d_private: 1,
            conv_halfwidth: 1,
            dropout: 0.0,
            encoder_direction: EncoderDirection::Forward,
        };
        SpireParams::init(&dims, 0).unwrap()
    }

    #[test]
    fn clipping_bounds_norm() {
        let p = params();
        let mut g = p.clone();
        let n = g.global_norm();
        g.scale(10.0 / n);
        let before = clip_grad_norm(&mut g, 1.0);
        assert!((before - 10.0).abs() < 1e-9);
        assert!(g.global_norm() <= 1.0 + 1e-6);
        let mut small = p.clone();
        small.scale(0.1 / n);
        let snapshot = small.clone();
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small.tensors()[0].value, snapshot.tensors()[0].value);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.regions[0].readout_b.fill(3.0);
        g.regions[0].w_shared.fill(-2.0);
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.update(&mut p, &g, 1e-3, &[ParamKind::SharedProjection]);
        for (a, b) in p.regions[0].readout_b.iter().zip(before.regions[0].readout_b.iter()) {
            assert!((b - a - 1e-3).abs() < 1e-9);
        }
        assert_eq!(p.regions[0].w_shared, before.regions[0].w_shared);
        assert!(adam.m.regions[0].w_shared.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = PlateauScheduler::new(0.5, 10);
        let mut lr = 1e-3;
        lr = s.step(1.0, lr);
        for _ in 0..10 {
            lr = s.step(1.0, lr);
            assert_eq!(lr, 1e-3);
        }
        lr = s.step(1.0, lr);
        assert_eq!(lr, 5e-4);
    }

    #[test]
    fn early_stopping_ignores_warmup() {
        let mut es = EarlyStopping::new(20, 140);
        for e in 0..140 {
            assert_eq!(es.step(e, 1.0), (false, false));
        }
        assert_eq!(es.step(140, 1.0), (true, false));
        for e in 141..160 {
            assert!(!es.step(e, 1.0).1);
        }
        assert!(es.step(160, 1.0).1);
    }
}
