//! Parameter-efficient finetuning for speech emotion recognition on a
//! desk-scale transformer.
//!
//! Four adaptor kinds attach to a frozen encoder: bottleneck adaptors,
//! LoRA on the attention projections, a softmax-weighted sum over block
//! outputs, and per-dimension weight gating. Around them sit synthetic
//! acted/natural corpora, a training loop with freeze policies, a
//! two-stage domain adaptation pipeline, and an exact audit of
//! trainable-parameter budgets at full upstream sizes.

pub mod adaptation;
pub mod adapters;
pub mod cli;
pub mod data;
pub mod encoder;
mod error;
pub mod experiment;
pub mod metrics;
pub mod ops;
pub mod params;
mod table;
pub mod training;

pub use error::{PeftError, Result};
