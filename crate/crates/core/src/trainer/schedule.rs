use serde::{Deserialize, Serialize};

use crate::error::{Result, SpireError};
use crate::losses::{LossTerm, LossWeights, VicregCoefficients};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    /// First epoch of the phase; it lasts until the next phase starts.
    pub start_epoch: usize,
    pub weights: LossWeights,
}

/// Piecewise-constant loss weights plus the private-gate ramp, the shared
/// projection freeze window and the aligner identity warm-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTable {
    pub phases: Vec<Phase>,
    /// Linear ramp of the private gate from 0 to 1 over `[start, end]`;
    /// `None` keeps the gate at 1.
    pub gate_ramp: Option<(usize, usize)>,
    /// Half-open `[start, end)` window during which shared projections are
    /// frozen.
    pub freeze_window: Option<(usize, usize)>,
    /// Epochs during which ConvAlign kernels stay at their impulse
    /// initialization (mappers still train).
    #[serde(default)]
    pub aligner_identity_warmup: usize,
}

#[allow(clippy::too_many_arguments)]
fn weights(
    align: f64,
    cross: f64,
    own: f64,
    orth: f64,
    mapid: f64,
    align_reg: f64,
    var_sh: f64,
    var_pr: f64,
) -> LossWeights {
    LossWeights {
        rec: 1.0,
        cross,
        self_recon: own,
        align,
        orth,
        mapid,
        align_reg,
        var_sh,
        var_pr,
        tau: 0.1,
        vicreg: VicregCoefficients::default(),
    }
}

fn phase(name: &str, start_epoch: usize, weights: LossWeights) -> Phase {
    Phase {
        name: name.to_string(),
        start_epoch,
        weights,
    }
}

impl ScheduleTable {
    /// Three-phase synthetic schedule (pre 0–80, ramp 80–140, post ≥ 140).
    pub fn synthetic() -> Self {
        ScheduleTable {
            phases: vec![
                phase("pre", 0, weights(0.22, 0.03, 0.02, 0.008, 0.010, 1e-4, 0.005, 0.002)),
                phase("ramp", 80, weights(0.10, 0.05, 0.04, 0.015, 0.005, 5e-4, 0.005, 0.002)),
                phase("post", 140, weights(0.08, 0.07, 0.03, 0.025, 0.000, 1e-4, 0.005, 0.002)),
            ],
            gate_ramp: Some((80, 140)),
            freeze_window: Some((90, 110)),
            aligner_identity_warmup: 0,
        }
    }

    /// Four-phase schedule used for intracranial recordings: 60 epochs of
    /// mapper-only alignment, then convolutional alignment, no freeze window.
    pub fn real_data() -> Self {
        ScheduleTable {
            phases: vec![
                phase("warmup", 0, weights(0.30, 0.00, 0.03, 0.012, 0.005, 0.0, 0.005, 0.002)),
                phase("align", 60, weights(0.30, 0.05, 0.05, 0.012, 0.005, 5e-5, 0.005, 0.002)),
                phase("tighten", 100, weights(0.38, 0.06, 0.05, 0.015, 0.003, 7.5e-5, 0.005, 0.002)),
                phase("final", 140, weights(0.45, 0.06, 0.05, 0.015, 0.000, 1e-4, 0.005, 0.002)),
            ],
            gate_ramp: None,
            freeze_window: None,
            aligner_identity_warmup: 60,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "synthetic" => Ok(Self::synthetic()),
            "real_data" => Ok(Self::real_data()),
            other => Err(SpireError::config(
                "schedule",
                format!("unknown schedule preset `{other}` (expected synthetic or real_data)"),
            )),
        }
    }

    pub fn validate(&self, max_epochs: usize) -> Result<()> {
        if self.phases.is_empty() {
            return Err(SpireError::config("schedule.phases", "need at least one phase"));
        }
        if self.phases[0].start_epoch != 0 {
            return Err(SpireError::config("schedule.phases", "first phase must start at epoch 0"));
        }
        for w in self.phases.windows(2) {
            if w[1].start_epoch <= w[0].start_epoch {
                return Err(SpireError::config("schedule.phases", "phase boundaries must be strictly increasing"));
            }
        }
        for p in &self.phases {
            p.weights
                .validate()
                .map_err(|e| SpireError::config(format!("schedule.phases.{}", p.name), e.to_string()))?;
        }
        if let Some((s, e)) = self.gate_ramp {
            if s > e || e > max_epochs {
                return Err(SpireError::config("schedule.gate_ramp", "need start ≤ end ≤ max_epochs"));
            }
        }
        if let Some((s, e)) = self.freeze_window {
            if s > e || e > max_epochs {
                return Err(SpireError::config("schedule.freeze_window", "need start ≤ end ≤ max_epochs"));
            }
        }
        Ok(())
    }

    pub fn phase_at(&self, epoch: usize) -> &Phase {
        self.phases
            .iter()
            .rev()
            .find(|p| p.start_epoch <= epoch)
            .unwrap_or(&self.phases[0])
    }

    pub fn final_weights(&self) -> &LossWeights {
        &self.phases.last().expect("non-empty schedule").weights
    }

    pub fn shared_frozen(&self, epoch: usize) -> bool {
        self.freeze_window.is_some_and(|(s, e)| (s..e).contains(&epoch))
    }

    pub fn kernels_pinned(&self, epoch: usize) -> bool {
        epoch < self.aligner_identity_warmup
    }

    /// Sets one λ to zero in every phase.
    pub fn zero_term(&mut self, term: LossTerm) {
        for p in &mut self.phases {
            p.weights.set_lambda(term, 0.0);
        }
    }
}

/// Loss weights in force at `epoch`; the boundary epoch belongs to the later
/// phase.
pub fn schedule_weights(table: &ScheduleTable, epoch: usize) -> LossWeights {
    table.phase_at(epoch).weights
}

/// 0 before the ramp, 1 after it, linear in between.
pub fn private_gate(table: &ScheduleTable, epoch: usize) -> f64 {
    match table.gate_ramp {
        None => 1.0,
        Some((s, e)) => {
            if epoch >= e {
                1.0
            } else if epoch <= s {
                0.0
            } else {
                (epoch - s) as f64 / (e - s) as f64
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_table_values() {
        let t = ScheduleTable::synthetic();
        let w = schedule_weights(&t, 50);
        assert_eq!((w.align, w.cross, w.orth), (0.22, 0.03, 0.008));
        let w = schedule_weights(&t, 100);
        assert_eq!((w.align, w.mapid), (0.10, 0.005));
        let w = schedule_weights(&t, 300);
        assert_eq!((w.mapid, w.orth), (0.0, 0.025));
        assert_eq!(t.phase_at(80).name, "ramp");
        assert_eq!(t.phase_at(79).name, "pre");
        assert_eq!(t.phase_at(140).name, "post");
    }

    #[test]
    fn gate_ramp() {
        let t = ScheduleTable::synthetic();
        assert_eq!(private_gate(&t, 70), 0.0);
        assert_eq!(private_gate(&t, 80), 0.0);
        assert_eq!(private_gate(&t, 110), 0.5);
        assert_eq!(private_gate(&t, 140), 1.0);
        assert_eq!(private_gate(&t, 400), 1.0);
        let mut prev = 0.0;
        for e in 0..500 {
            let a = private_gate(&t, e);
            assert!(a >= prev);
            prev = a;
        }
        assert_eq!(private_gate(&ScheduleTable::real_data(), 0), 1.0);
    }

    #[test]
    fn freeze_window_is_half_open() {
        let t = ScheduleTable::synthetic();
        assert!(!t.shared_frozen(89));
        assert!(t.shared_frozen(90));
        assert!(t.shared_frozen(109));
        assert!(!t.shared_frozen(110));
    }

    #[test]
    fn validation() {
        assert!(ScheduleTable::synthetic().validate(500).is_ok());
        assert!(ScheduleTable::synthetic().validate(100).is_err());
        let mut t = ScheduleTable::synthetic();
        t.phases[2].start_epoch = 80;
        assert!(t.validate(500).is_err());
        assert!(ScheduleTable::real_data().validate(200).is_ok());
    }
}
