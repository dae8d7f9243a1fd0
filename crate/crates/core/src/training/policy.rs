use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterFlags;
use crate::encoder::{GradRequest, Model};
use crate::error::{PeftError, Result};
use crate::params::GroupKind;

/// Training regime for the upstream encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Pretrained encoder left untouched; only the head learns.
    #[serde(rename = "PT")]
    Pt,
    /// Every transformer block updated; frontend frozen; no adaptors.
    #[serde(rename = "FT")]
    Ft,
    /// Base frozen; flagged adaptors updated.
    #[serde(rename = "PEFT")]
    Peft,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pt => "PT",
            Mode::Ft => "FT",
            Mode::Peft => "PEFT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Update {
    Updated,
    Frozen,
    #[default]
    Absent,
}

impl Update {
    /// `✓` updated, `∗` frozen, blank when absent.
    pub fn symbol(self) -> &'static str {
        match self {
            Update::Updated => "✓",
            Update::Frozen => "∗",
            Update::Absent => "",
        }
    }

    fn from_enabled(enabled: bool) -> Self {
        if enabled {
            Update::Updated
        } else {
            Update::Absent
        }
    }
}

/// Which parameter groups receive gradient updates. The head always does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezePolicy {
    pub mode: Mode,
    #[serde(default)]
    pub ba: Update,
    #[serde(default)]
    pub lora: Update,
    #[serde(default)]
    pub ws: Update,
    #[serde(default)]
    pub wg: Update,
}

impl FreezePolicy {
    pub fn pt() -> Self {
        FreezePolicy { mode: Mode::Pt, ba: Update::Absent, lora: Update::Absent, ws: Update::Absent, wg: Update::Absent }
    }

    pub fn ft() -> Self {
        FreezePolicy { mode: Mode::Ft, ..Self::pt() }
    }

    /// PEFT with every enabled adaptor updated.
    pub fn peft(flags: AdapterFlags) -> Self {
        FreezePolicy {
            mode: Mode::Peft,
            ba: Update::from_enabled(flags.ba),
            lora: Update::from_enabled(flags.lora),
            ws: Update::from_enabled(flags.ws),
            wg: Update::from_enabled(flags.wg),
        }
    }

    /// All four adaptors present; BA and LoRA optionally frozen.
    pub fn stage_two(freeze_ba: bool, freeze_lora: bool) -> Self {
        let pick = |frozen| if frozen { Update::Frozen } else { Update::Updated };
        FreezePolicy {
            mode: Mode::Peft,
            ba: pick(freeze_ba),
            lora: pick(freeze_lora),
            ws: Update::Updated,
            wg: Update::Updated,
        }
    }

    /// Adaptor kinds this policy expects to exist.
    pub fn required_adapters(&self) -> AdapterFlags {
        AdapterFlags {
            ba: self.ba != Update::Absent,
            lora: self.lora != Update::Absent,
            ws: self.ws != Update::Absent,
            wg: self.wg != Update::Absent,
        }
    }

    /// Initial learning rate used when the config leaves it unset.
    pub fn default_lr(&self) -> f64 {
        match self.mode {
            Mode::Ft => 5e-5,
            Mode::Pt | Mode::Peft => 5e-4,
        }
    }

    pub fn flag_cells(&self) -> [&'static str; 4] {
        [self.ba.symbol(), self.lora.symbol(), self.ws.symbol(), self.wg.symbol()]
    }
}

/// The parameter blocks that will receive updates. Everything else is
/// left bit-identical by training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainMask {
    pub blocks: BTreeSet<String>,
    pub kinds: BTreeSet<GroupKind>,
}

impl TrainMask {
    pub fn contains(&self, name: &str) -> bool {
        self.blocks.contains(name)
    }

    pub fn grad_request(&self) -> GradRequest {
        let has = |k| self.kinds.contains(&k);
        GradRequest {
            frontend: has(GroupKind::Frontend),
            base: has(GroupKind::Base),
            ba: has(GroupKind::Bottleneck),
            lora: has(GroupKind::Lora),
            ws: has(GroupKind::WeightedSum),
            wg: has(GroupKind::Gate),
            head: has(GroupKind::Head),
        }
    }

    /// Per-block flags in `Model::blocks` order.
    pub fn flags_for(&self, model: &Model) -> Vec<bool> {
        model.blocks().iter().map(|b| self.contains(&b.name)).collect()
    }
}

/// Resolves a policy against a concrete model.
pub fn build_mask(policy: &FreezePolicy, model: &Model) -> Result<TrainMask> {
    let present = model.adapters.flags;
    let required = policy.required_adapters();
    match policy.mode {
        Mode::Pt | Mode::Ft => {
            if required.any() {
                return Err(PeftError::config(format!("{} policy cannot carry adaptor flags", policy.mode)));
            }
            if present.any() {
                return Err(PeftError::config(format!(
                    "{} runs on the bare encoder, but adaptors {} are attached",
                    policy.mode,
                    present.label()
                )));
            }
        }
        Mode::Peft => {
            let pairs = [
                ("BA", required.ba, present.ba),
                ("LoRA", required.lora, present.lora),
                ("WS", required.ws, present.ws),
                ("WG", required.wg, present.wg),
            ];
            for (name, want, have) in pairs {
                if want && !have {
                    return Err(PeftError::config(format!("policy sets {name} but the adaptor is absent")));
                }
                if have && !want {
                    return Err(PeftError::config(format!("{name} is attached but the policy marks it absent")));
                }
            }
        }
    }

    let mut kinds = BTreeSet::from([GroupKind::Head]);
    match policy.mode {
        Mode::Pt => {}
        Mode::Ft => {
            kinds.insert(GroupKind::Base);
        }
        Mode::Peft => {
            let updated = [
                (policy.ba, GroupKind::Bottleneck),
                (policy.lora, GroupKind::Lora),
                (policy.ws, GroupKind::WeightedSum),
                (policy.wg, GroupKind::Gate),
            ];
            kinds.extend(updated.into_iter().filter(|(u, _)| *u == Update::Updated).map(|(_, k)| k));
        }
    }
    let blocks = model
        .blocks()
        .into_iter()
        .filter(|b| kinds.contains(&b.group.kind()))
        .map(|b| b.name)
        .collect();
    Ok(TrainMask { blocks, kinds })
}
