use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use super::forward::{encode_backward, encode_traced, EncoderTrace, GradRequest};
use super::head::{pool_backward, pool_traced, PoolTrace};
use super::params::{DownstreamHead, EncoderParams, Task};
use super::ArchShape;
use crate::adapters::{AdapterFlags, AdapterHyper, AdapterSet};
use crate::error::{PeftError, Result};
use crate::params::{checksum, BlockMut, BlockRef, GroupKind};

/// Base encoder, adaptors and downstream head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub adapters: AdapterSet,
    pub head: DownstreamHead,
}

/// Everything a reverse pass needs from one utterance's forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub encoder: EncoderTrace,
    pub pool: PoolTrace,
}

impl ForwardPass {
    pub fn output(&self) -> &Array1<f64> {
        &self.pool.output
    }
}

impl Model {
    pub fn new<R: Rng + ?Sized>(
        arch: &ArchShape,
        flags: AdapterFlags,
        hyper: AdapterHyper,
        task: Task,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = EncoderParams::new(arch, rng)?;
        let adapters = AdapterSet::new(arch, flags, hyper, rng)?;
        let head = DownstreamHead::new(arch.d_model, task, rng);
        Ok(Model { encoder, adapters, head })
    }

    /// Wraps existing base weights with fresh adaptors and a fresh head.
    pub fn from_encoder<R: Rng + ?Sized>(
        encoder: EncoderParams,
        flags: AdapterFlags,
        hyper: AdapterHyper,
        task: Task,
        rng: &mut R,
    ) -> Result<Self> {
        let adapters = AdapterSet::new(&encoder.arch, flags, hyper, rng)?;
        let head = DownstreamHead::new(encoder.arch.d_model, task, rng);
        Ok(Model { encoder, adapters, head })
    }

    pub fn arch(&self) -> &ArchShape {
        &self.encoder.arch
    }

    pub fn task(&self) -> Task {
        self.head.task
    }

    pub fn forward(&self, frames: ArrayView2<f64>) -> Result<ForwardPass> {
        let encoder = encode_traced(frames, &self.encoder, &self.adapters)?;
        let pool = pool_traced(&encoder.states, &self.adapters, &self.head)?;
        Ok(ForwardPass { encoder, pool })
    }

    /// Head output for one utterance: 4 logits or 3 attributes.
    pub fn predict(&self, frames: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(frames)?.pool.output)
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to the head output is `doutput`.
    pub fn backward(&self, pass: &ForwardPass, doutput: ArrayView1<f64>, req: &GradRequest, grads: &mut Model) {
        let upstream = req.frontend || req.base || req.ba || req.lora || req.wg;
        let d_states = pool_backward(
            &pass.pool,
            &self.head,
            doutput,
            req.head.then_some(&mut grads.head),
            req.ws.then_some(&mut grads.adapters),
            upstream,
        );
        if upstream {
            encode_backward(
                &self.encoder,
                &self.adapters,
                &pass.encoder,
                d_states,
                req,
                &mut grads.encoder,
                &mut grads.adapters,
            );
        }
    }

    pub fn zeros_like(&self) -> Model {
        Model {
            encoder: self.encoder.zeros_like(),
            adapters: self.adapters.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// All parameter blocks: frontend, base blocks, adaptors, head.
    pub fn blocks(&self) -> Vec<BlockRef<'_>> {
        let mut out = self.encoder.blocks();
        out.extend(self.adapters.blocks());
        out.extend(self.head.blocks());
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = self.encoder.blocks_mut();
        out.extend(self.adapters.blocks_mut());
        out.extend(self.head.blocks_mut());
        out
    }

    pub fn checksum(&self) -> u64 {
        checksum(self.blocks())
    }

    /// Checksum restricted to blocks of the given kinds.
    pub fn checksum_of(&self, kinds: &[GroupKind]) -> u64 {
        checksum(self.blocks().into_iter().filter(|b| kinds.contains(&b.group.kind())))
    }

    /// Copies block values from `other`, which must share this structure.
    pub fn assign_from(&mut self, other: &Model) -> Result<()> {
        let src = other.blocks();
        let mut dst = self.blocks_mut();
        if src.len() != dst.len() {
            return Err(PeftError::config("models differ in block structure"));
        }
        for (d, s) in dst.iter_mut().zip(src) {
            if d.name != s.name || d.data.shape() != s.data.shape() {
                return Err(PeftError::config(format!("block {} does not match {}", d.name, s.name)));
            }
            d.data.assign(&s.data);
        }
        Ok(())
    }
}

/// Predictions for a batch of utterances, in input order.
pub fn predict_batch(model: &Model, frames: &[&Array2<f64>]) -> Result<Vec<Array1<f64>>> {
    frames.iter().map(|f| model.predict(f.view())).collect()
}
