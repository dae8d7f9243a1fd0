use serde::{Deserialize, Serialize};

use crate::error::{PeftError, Result};

/// Transformer architecture description.
///
/// Used both to build the desk-scale encoder and to audit adaptor budgets
/// against full-size upstream shapes without allocating their base weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchShape {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Input feature dimension consumed by the linear frontend.
    pub feat_dim: usize,
    pub max_frames: usize,
    #[serde(default = "default_true")]
    pub positional_encoding: bool,
}

fn default_true() -> bool {
    true
}

impl ArchShape {
    /// Desk-scale encoder used for all training experiments.
    pub fn toy() -> Self {
        ArchShape {
            layers: 4,
            d_model: 64,
            heads: 4,
            d_ff: 256,
            feat_dim: 20,
            max_frames: 512,
            positional_encoding: true,
        }
    }

    /// 12 blocks, hidden size 768, as in wav2vec 2.0 base.
    pub fn wav2vec2_base() -> Self {
        ArchShape {
            layers: 12,
            d_model: 768,
            heads: 12,
            d_ff: 3072,
            feat_dim: 512,
            max_frames: 4096,
            positional_encoding: true,
        }
    }

    /// 24 blocks, hidden size 1024, as in HuBERT large.
    pub fn hubert_large() -> Self {
        ArchShape {
            layers: 24,
            d_model: 1024,
            heads: 16,
            d_ff: 4096,
            feat_dim: 512,
            max_frames: 4096,
            positional_encoding: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "wav2vec2-base" => Ok(Self::wav2vec2_base()),
            "hubert-large" => Ok(Self::hubert_large()),
            other => Err(PeftError::config(format!("unknown arch preset `{other}`"))),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(PeftError::config("arch needs at least one layer"));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(PeftError::config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_ff < self.d_model {
            return Err(PeftError::config(format!(
                "d_ff {} must be at least d_model {}",
                self.d_ff, self.d_model
            )));
        }
        if self.feat_dim == 0 || self.max_frames == 0 {
            return Err(PeftError::config("feat_dim and max_frames must be positive"));
        }
        Ok(())
    }

    /// Trainable values in the transformer blocks (attention, feed-forward,
    /// layer norms), i.e. what full finetuning updates. Excludes the frontend.
    pub fn block_param_count(&self) -> usize {
        let d = self.d_model;
        let f = self.d_ff;
        let attention = 4 * (d * d + d);
        let ff = f * d + f + d * f + d;
        let norms = 4 * d;
        self.layers * (attention + ff + norms)
    }

    pub fn frontend_param_count(&self) -> usize {
        self.d_model * self.feat_dim + self.d_model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in ["toy", "wav2vec2-base", "hubert-large"] {
            ArchShape::preset(name).unwrap().validate().unwrap();
        }
        assert!(ArchShape::preset("bert").is_err());
    }

    #[test]
    fn rejects_bad_heads() {
        let mut a = ArchShape::toy();
        a.heads = 5;
        assert!(a.validate().is_err());
    }

    #[test]
    fn wav2vec2_block_count_is_roughly_85m() {
        // 12 post-LN blocks of width 768 hold ~85M values; the full model's
        // 90M includes the convolutional extractor and positional conv.
        let n = ArchShape::wav2vec2_base().block_param_count();
        assert_eq!(n, 85_054_464);
    }
}
