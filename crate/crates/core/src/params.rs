//! Named parameter blocks.
//!
//! Every trainable tensor in a model is exposed as a block with a stable
//! name and a [`Group`]. Freeze masks, the optimizer, gradient checks and
//! checkpoints all work over this flat view, in a fixed order.

use ndarray::{ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

use crate::adapters::LoraTarget;

/// Which part of the model a parameter block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Frontend,
    Base { layer: usize },
    Bottleneck { layer: usize },
    Lora { layer: usize, target: LoraTarget },
    WeightedSum,
    Gate { layer: usize },
    Head,
}

impl Group {
    pub fn kind(&self) -> GroupKind {
        match self {
            Group::Frontend => GroupKind::Frontend,
            Group::Base { .. } => GroupKind::Base,
            Group::Bottleneck { .. } => GroupKind::Bottleneck,
            Group::Lora { .. } => GroupKind::Lora,
            Group::WeightedSum => GroupKind::WeightedSum,
            Group::Gate { .. } => GroupKind::Gate,
            Group::Head => GroupKind::Head,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupKind {
    Frontend,
    Base,
    Bottleneck,
    Lora,
    WeightedSum,
    Gate,
    Head,
}

impl GroupKind {
    pub fn is_adapter(self) -> bool {
        matches!(
            self,
            GroupKind::Bottleneck | GroupKind::Lora | GroupKind::WeightedSum | GroupKind::Gate
        )
    }
}

pub struct BlockRef<'a> {
    pub name: String,
    pub group: Group,
    pub data: ArrayViewD<'a, f64>,
}

pub struct BlockMut<'a> {
    pub name: String,
    pub group: Group,
    pub data: ArrayViewMutD<'a, f64>,
}

/// Implements `block_views` / `block_views_mut` over the listed fields, in order.
macro_rules! param_fields {
    ($($name:literal => $field:ident),* $(,)?) => {
        pub(crate) fn block_views(&self) -> Vec<(&'static str, ndarray::ArrayViewD<'_, f64>)> {
            vec![$(($name, self.$field.view().into_dyn())),*]
        }

        pub(crate) fn block_views_mut(
            &mut self,
        ) -> Vec<(&'static str, ndarray::ArrayViewMutD<'_, f64>)> {
            vec![$(($name, self.$field.view_mut().into_dyn())),*]
        }
    };
}

pub(crate) use param_fields;

/// FNV-1a over the little-endian bytes of every value, in block order.
pub fn checksum<'a>(blocks: impl IntoIterator<Item = BlockRef<'a>>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for block in blocks {
        for byte in block.name.bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
        for v in block.data.iter() {
            for byte in v.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    hash
}
