use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpireError};
use crate::losses::LossTerm;
use super::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    /// Kernels stay impulses and mappers identity for the whole run.
    IdentityAligner,
    /// Private gate fixed at 1 from the first epoch.
    NoPrivateRamp,
    /// Shared projections never frozen.
    NoFreeze,
    /// Both variance guards removed.
    NoVarGuard,
}

impl Control {
    pub const ALL: [Control; 4] = [Control::IdentityAligner, Control::NoPrivateRamp, Control::NoFreeze, Control::NoVarGuard];

    pub fn name(self) -> &'static str {
        match self {
            Control::IdentityAligner => "identity_aligner",
            Control::NoPrivateRamp => "no_private_ramp",
            Control::NoFreeze => "no_freeze",
            Control::NoVarGuard => "no_var_guard",
        }
    }
}

/// A training variant: a set of zeroed loss weights plus control flags.
/// Both compose freely.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub name: String,
    pub zeroed: Vec<LossTerm>,
    pub controls: Vec<Control>,
}

pub const FULL_VARIANT: &str = "SPIRE_synth";
/// Zeroes the alignment objective together with the mapper and kernel
/// regularisers.
pub const ALIGN_FAMILY_VARIANT: &str = "abl_no_align_family";

impl fmt::Display for AblationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl AblationSpec {
    pub fn full() -> Self {
        AblationSpec {
            name: FULL_VARIANT.into(),
            zeroed: Vec::new(),
            controls: Vec::new(),
        }
    }

    fn single(name: &str) -> Result<Self> {
        let mut spec = AblationSpec {
            name: name.into(),
            zeroed: Vec::new(),
            controls: Vec::new(),
        };
        if name == FULL_VARIANT {
        } else if name == ALIGN_FAMILY_VARIANT {
            spec.zeroed = vec![LossTerm::Align, LossTerm::MapId, LossTerm::AlignReg];
        } else if let Some(term) = name.strip_prefix("abl_no_w_") {
            match LossTerm::from_name(term) {
                Some(LossTerm::Rec) | None => {
                    return Err(SpireError::config("variant", format!("`{name}` does not name a removable loss term")))
                }
                Some(t) => spec.zeroed.push(t),
            }
        } else if let Some(c) = name.strip_prefix("ctrl_").and_then(|c| Control::ALL.into_iter().find(|k| k.name() == c)) {
            spec.controls.push(c);
        } else {
            return Err(SpireError::config("variant", format!("unknown variant `{name}`")));
        }
        Ok(spec)
    }

    /// Parses a registry name; `+` joins variants, e.g.
    /// `abl_no_w_orth+ctrl_no_freeze`.
    pub fn parse(name: &str) -> Result<Self> {
        let mut out = AblationSpec {
            name: name.trim().into(),
            zeroed: Vec::new(),
            controls: Vec::new(),
        };
        for part in name.split('+') {
            let s = Self::single(part.trim())?;
            out.zeroed.extend(s.zeroed);
            out.controls.extend(s.controls);
        }
        out.zeroed.sort_by_key(|t| t.name());
        out.zeroed.dedup();
        out.controls.sort();
        out.controls.dedup();
        Ok(out)
    }

    pub fn is_full(&self) -> bool {
        self.zeroed.is_empty() && self.controls.is_empty()
    }

    /// Applies the variant to an experiment configuration.
    pub fn apply(&self, cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
        let mut out = cfg.clone();
        let mut table = cfg.schedule.resolve()?;
        for &t in &self.zeroed {
            table.zero_term(t);
        }
        for &c in &self.controls {
            match c {
                Control::IdentityAligner => out.train.pin_aligners = true,
                Control::NoPrivateRamp => table.gate_ramp = None,
                Control::NoFreeze => table.freeze_window = None,
                Control::NoVarGuard => {
                    table.zero_term(LossTerm::VarShared);
                    table.zero_term(LossTerm::VarPrivate);
                }
            }
        }
        out.schedule = super::ScheduleSpec::Table(table);
        Ok(out)
    }
}

/// Every single-step variant in the registry, full model first.
pub fn registry() -> Vec<AblationSpec> {
    let mut names = vec![FULL_VARIANT.to_string()];
    names.extend(LossTerm::ALL.iter().filter(|t| **t != LossTerm::Rec).map(|t| format!("abl_no_w_{}", t.name())));
    names.push(ALIGN_FAMILY_VARIANT.into());
    names.extend(Control::ALL.iter().map(|c| format!("ctrl_{}", c.name())));
    names.iter().map(|n| AblationSpec::parse(n).expect("registry names parse")).collect()
}
