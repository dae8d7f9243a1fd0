//! Self-supervised pretraining of the base encoder by masked-frame
//! reconstruction. Produces the frozen upstream that PT, FT and PEFT runs
//! start from.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::forward::{encode_backward, encode_traced, GradRequest};
use super::{ArchShape, EncoderParams};
use crate::adapters::AdapterSet;
use crate::data::Corpus;
use crate::error::{PeftError, Result};
use crate::params::{param_fields, BlockMut, BlockRef, Group};
use crate::training::{Adam, LinearSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Probability that a frame is zeroed and must be reconstructed.
    #[serde(default = "default_mask_prob")]
    pub mask_prob: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    3
}

fn default_lr() -> f64 {
    1e-3
}

fn default_mask_prob() -> f64 {
    0.15
}

fn default_batch() -> usize {
    16
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: default_epochs(),
            lr: default_lr(),
            mask_prob: default_mask_prob(),
            batch_size: default_batch(),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(PeftError::config("pretraining lr must be positive"));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(PeftError::config("mask_prob must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(PeftError::config("pretraining batch size must be positive"));
        }
        Ok(())
    }
}

/// Linear map from the last hidden state back to input features.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconHead {
    /// `F × d`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl ReconHead {
    param_fields!("w" => w, "b" => b);

    fn new<R: Rng + ?Sized>(d: usize, f: usize, rng: &mut R) -> Self {
        let n = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite std");
        ReconHead { w: Array2::from_shape_fn((f, d), |_| n.sample(rng)), b: Array1::zeros(f) }
    }

    fn zeros_like(&self) -> Self {
        ReconHead { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.len()) }
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub encoder: EncoderParams,
    pub recon: ReconHead,
    /// Mean reconstruction loss per epoch.
    pub losses: Vec<f64>,
}

fn mask_frames(frames: &Array2<f64>, prob: f64, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>) {
    let t = frames.nrows();
    let mut masked: Vec<usize> = (0..t).filter(|_| rng.random_bool(prob)).collect();
    if masked.is_empty() {
        masked.push(rng.random_range(0..t));
    }
    let mut input = frames.clone();
    for &i in &masked {
        input.row_mut(i).fill(0.0);
    }
    (input, masked)
}

/// Masked-frame MSE of one utterance and, optionally, its gradients.
fn utterance_step(
    encoder: &EncoderParams,
    recon: &ReconHead,
    frames: &Array2<f64>,
    input: &Array2<f64>,
    masked: &[usize],
    grads: Option<(&mut EncoderParams, &mut ReconHead, f64)>,
) -> Result<f64> {
    let aset = AdapterSet::empty();
    let trace = encode_traced(input.view(), encoder, &aset)?;
    let last = trace.states.last().expect("at least one layer");
    let rows = last.select(Axis(0), masked);
    let target = frames.select(Axis(0), masked);
    let pred = rows.dot(&recon.w.t()) + &recon.b;
    let diff = &pred - &target;
    let count = diff.len() as f64;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / count;

    if let Some((genc, grec, weight)) = grads {
        let dpred = &diff * (2.0 * weight / count);
        grec.w += &dpred.t().dot(&rows);
        grec.b += &dpred.sum_axis(Axis(0));
        let drows = dpred.dot(&recon.w);
        let mut dlast = Array2::zeros(last.raw_dim());
        for (k, &i) in masked.iter().enumerate() {
            dlast.row_mut(i).assign(&drows.row(k));
        }
        let mut d_states = vec![None; encoder.layers.len()];
        *d_states.last_mut().unwrap() = Some(dlast);
        let req = GradRequest { frontend: true, base: true, ..GradRequest::default() };
        let mut unused = AdapterSet::empty();
        encode_backward(encoder, &aset, &trace, d_states, &req, genc, &mut unused);
    }
    Ok(loss)
}

fn all_blocks_mut<'a>(enc: &'a mut EncoderParams, recon: &'a mut ReconHead) -> Vec<BlockMut<'a>> {
    let mut out = enc.blocks_mut();
    out.extend(recon.block_views_mut().into_iter().map(|(n, v)| BlockMut {
        name: format!("recon.{n}"),
        group: Group::Head,
        data: v,
    }));
    out
}

fn all_blocks<'a>(enc: &'a EncoderParams, recon: &'a ReconHead) -> Vec<BlockRef<'a>> {
    let mut out = enc.blocks();
    out.extend(recon.block_views().into_iter().map(|(n, v)| BlockRef {
        name: format!("recon.{n}"),
        group: Group::Head,
        data: v,
    }));
    out
}

/// Trains `encoder` on `corpus` by masked-frame reconstruction.
pub fn pretrain(encoder: &EncoderParams, corpus: &Corpus, cfg: &PretrainConfig) -> Result<Pretrained> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(PeftError::input("cannot pretrain on an empty corpus"));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut enc = encoder.clone();
    let mut recon = ReconHead::new(enc.arch.d_model, enc.arch.feat_dim, &mut init_rng);
    let batches_per_epoch = corpus.len().div_ceil(cfg.batch_size);
    let schedule = LinearSchedule::new(cfg.lr, batches_per_epoch * cfg.epochs);
    let mut adam = Adam::default();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        mask_rng.set_stream(epoch as u64 + 1);
        let mut epoch_loss = 0.0;
        let utterances: Vec<_> = corpus.iter().collect();
        for batch in utterances.chunks(cfg.batch_size) {
            let mut genc = enc.zeros_like();
            let mut grec = recon.zeros_like();
            let weight = 1.0 / batch.len() as f64;
            for u in batch {
                let (input, masked) = mask_frames(&u.frames, cfg.mask_prob, &mut mask_rng);
                let loss = utterance_step(&enc, &recon, &u.frames, &input, &masked, Some((&mut genc, &mut grec, weight)))?;
                if !loss.is_finite() {
                    return Err(PeftError::Divergence { epoch: epoch + 1, step, loss });
                }
                epoch_loss += loss;
            }
            let trainable = vec![true; all_blocks(&genc, &grec).len()];
            adam.step(all_blocks_mut(&mut enc, &mut recon), all_blocks(&genc, &grec), &trainable, schedule.lr_at(step));
            step += 1;
        }
        losses.push(epoch_loss / corpus.len() as f64);
    }
    Ok(Pretrained { encoder: enc, recon, losses })
}

/// Mean masked-frame reconstruction loss with a fixed mask seed.
pub fn reconstruction_loss(pre: &Pretrained, corpus: &Corpus, mask_prob: f64, seed: u64) -> Result<f64> {
    if corpus.is_empty() {
        return Err(PeftError::input("cannot score an empty corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for u in corpus {
        let (input, masked) = mask_frames(&u.frames, mask_prob, &mut rng);
        total += utterance_step(&pre.encoder, &pre.recon, &u.frames, &input, &masked, None)?;
    }
    Ok(total / corpus.len() as f64)
}

/// Fresh encoder for `arch`, pretrained on `corpus`.
pub fn pretrain_base(arch: &ArchShape, corpus: &Corpus, cfg: &PretrainConfig) -> Result<EncoderParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba5e);
    let init = EncoderParams::new(arch, &mut rng)?;
    Ok(pretrain(&init, corpus, cfg)?.encoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, CorpusSpec};

    fn small_arch() -> ArchShape {
        ArchShape { layers: 2, d_model: 16, heads: 2, d_ff: 32, feat_dim: 20, max_frames: 64, positional_encoding: true }
    }

    #[test]
    fn reconstruction_improves() {
        let corpus = generate_corpus(&CorpusSpec { per_cell: 2, sessions: 2, ..CorpusSpec::acted(0) }).unwrap();
        let cfg = PretrainConfig { epochs: 8, batch_size: 4, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let init = EncoderParams::new(&small_arch(), &mut rng).unwrap();
        let before = Pretrained {
            encoder: init.clone(),
            recon: ReconHead::new(16, 20, &mut ChaCha8Rng::seed_from_u64(cfg.seed)),
            losses: vec![],
        };
        let after = pretrain(&init, &corpus, &cfg).unwrap();
        let l0 = reconstruction_loss(&before, &corpus, 0.15, 9).unwrap();
        let l1 = reconstruction_loss(&after, &corpus, 0.15, 9).unwrap();
        assert!(l1 < l0, "{l0} -> {l1}");
    }

    #[test]
    fn empty_corpus_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let init = EncoderParams::new(&small_arch(), &mut rng).unwrap();
        let err = pretrain(&init, &Corpus::new(vec![]), &PretrainConfig::default());
        assert!(matches!(err, Err(PeftError::Input(_))));
    }
}
