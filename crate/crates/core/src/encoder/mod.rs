//! Desk-scale transformer encoder with adaptor hooks, the pooled
//! downstream head, and masked-frame pretraining.
//!
//! Each block is post-LN:
//!
//! ```text
//! a = LN1(x + MHA(x))          q/k/v projections carry LoRA deltas
//! f = FF(a)                    GELU feed-forward
//! f = f + BA(f)                bottleneck adaptor with residual
//! y = LN2(a + f)
//! out = σ(g) ⊙ y               weight gating; feeds the next block
//! ```
//!
//! The head mixes block outputs with softmax weights, mean-pools over
//! frames and applies a two-layer ReLU network.

mod arch;
mod forward;
mod head;
mod model;
mod params;
mod pretrain;

pub use arch::ArchShape;
pub use forward::{encode, encode_traced, EncoderTrace, GradRequest, LayerTrace};
pub use head::{pool_and_predict, PoolTrace};
pub use model::{predict_batch, ForwardPass, Model};
pub use params::{DownstreamHead, EncoderParams, Frontend, LayerParams, Task};
pub use pretrain::{pretrain, pretrain_base, reconstruction_loss, PretrainConfig, Pretrained, ReconHead};
