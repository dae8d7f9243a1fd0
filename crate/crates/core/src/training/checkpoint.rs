//! Checkpoint container.
//!
//! A single JSON document:
//!
//! ```text
//! {
//!   "format": "peftlab-checkpoint",
//!   "version": 1,
//!   "arch": { ArchShape },
//!   "task": "classification" | "regression",
//!   "adapters": { "ba": bool, "lora": bool, "ws": bool, "wg": bool },
//!   "hyper": { "bottleneck": m, "rank": r, "activation": "relu" | "gelu" },
//!   "gate_sites": [layer, ...],
//!   "train_config": { TrainConfig } | null,
//!   "policy": { FreezePolicy } | null,
//!   "blocks": [ { "name": str, "shape": [usize], "values": [f64, row-major] } ]
//! }
//! ```
//!
//! Blocks appear in `Model::blocks` order. Values round-trip bit-exactly.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::FreezePolicy;
use super::trainer::TrainConfig;
use crate::adapters::{AdapterFlags, AdapterHyper, GateVector};
use crate::encoder::{ArchShape, Model, Task};
use crate::error::{PeftError, Result};

pub const FORMAT: &str = "peftlab-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub arch: ArchShape,
    pub task: Task,
    pub adapters: AdapterFlags,
    pub hyper: AdapterHyper,
    pub gate_sites: Vec<usize>,
    pub train_config: Option<TrainConfig>,
    pub policy: Option<FreezePolicy>,
    pub blocks: Vec<StoredBlock>,
}

impl Checkpoint {
    pub fn capture(model: &Model, train_config: Option<&TrainConfig>, policy: Option<&FreezePolicy>) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            arch: model.arch().clone(),
            task: model.task(),
            adapters: model.adapters.flags,
            hyper: model.adapters.hyper,
            gate_sites: model.adapters.gates.as_ref().map_or_else(Vec::new, |g| g.sites.clone()),
            train_config: train_config.cloned(),
            policy: policy.copied(),
            blocks: model
                .blocks()
                .into_iter()
                .map(|b| StoredBlock { name: b.name, shape: b.data.shape().to_vec(), values: b.data.iter().copied().collect() })
                .collect(),
        }
    }

    /// Rebuilds the model. Every block must be present with its exact shape.
    pub fn restore(&self) -> Result<Model> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(PeftError::config(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                self.format, self.version
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(&self.arch, self.adapters, self.hyper, self.task, &mut rng)?;
        if let Some(g) = model.adapters.gates.as_mut() {
            *g = GateVector::new(self.arch.d_model, self.gate_sites.clone());
        }
        model.adapters.validate(&self.arch)?;
        let mut targets = model.blocks_mut();
        if targets.len() != self.blocks.len() {
            return Err(PeftError::config(format!(
                "checkpoint holds {} blocks, model expects {}",
                self.blocks.len(),
                targets.len()
            )));
        }
        for (dst, src) in targets.iter_mut().zip(&self.blocks) {
            if dst.name != src.name {
                return Err(PeftError::config(format!("expected block {}, found {}", dst.name, src.name)));
            }
            if dst.data.shape() != src.shape.as_slice() || src.values.len() != dst.data.len() {
                return Err(PeftError::dim("checkpoint block", format!("{:?}", dst.data.shape()), format!("{:?}", src.shape)));
            }
            for (d, s) in dst.data.iter_mut().zip(&src.values) {
                *d = *s;
            }
        }
        drop(targets);
        Ok(model)
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    train_config: Option<&TrainConfig>,
    policy: Option<&FreezePolicy>,
) -> Result<()> {
    let ck = Checkpoint::capture(model, train_config, policy);
    fs::write(path, serde_json::to_vec(&ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model {
        let arch = ArchShape { layers: 2, d_model: 8, heads: 2, d_ff: 16, feat_dim: 3, max_frames: 8, positional_encoding: true };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = Model::new(&arch, AdapterFlags::ALL, AdapterHyper::new(2, 1), Task::Regression, &mut rng).unwrap();
        for mut b in m.blocks_mut() {
            b.data.mapv_inplace(|v| v + 1.0 / 3.0);
        }
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&path, &m, Some(&TrainConfig::default()), Some(&FreezePolicy::stage_two(true, false))).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.policy, Some(FreezePolicy::stage_two(true, false)));
        let back = ck.restore().unwrap();
        assert_eq!(back, m);
        assert_eq!(back.checksum(), m.checksum());
    }

    #[test]
    fn tampered_shape_rejected() {
        let mut ck = Checkpoint::capture(&tiny(), None, None);
        ck.blocks[0].shape = vec![1, 1];
        assert!(ck.restore().is_err());
        let mut ck = Checkpoint::capture(&tiny(), None, None);
        ck.version = 99;
        assert!(matches!(ck.restore(), Err(PeftError::Config(_))));
    }
}
