use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ArchShape;
use crate::error::Result;
use crate::params::{param_fields, BlockMut, BlockRef, Group};

fn init_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| n.sample(rng))
}

/// Linear projection from input features to the model width. Stands in for
/// a convolutional feature extractor and is never finetuned.
#[derive(Debug, Clone, PartialEq)]
pub struct Frontend {
    /// `d × F`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Frontend {
    param_fields!("w" => w, "b" => b);
}

/// One post-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    /// `d_ff × d`
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    /// `d × d_ff`
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
}

impl LayerParams {
    fn new<R: Rng + ?Sized>(d: usize, d_ff: usize, rng: &mut R) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        LayerParams {
            wq: init_matrix(d, d, s, rng),
            bq: Array1::zeros(d),
            wk: init_matrix(d, d, s, rng),
            bk: Array1::zeros(d),
            wv: init_matrix(d, d, s, rng),
            bv: Array1::zeros(d),
            wo: init_matrix(d, d, s, rng),
            bo: Array1::zeros(d),
            ln1_gamma: Array1::ones(d),
            ln1_beta: Array1::zeros(d),
            w_ff1: init_matrix(d_ff, d, s, rng),
            b_ff1: Array1::zeros(d_ff),
            w_ff2: init_matrix(d, d_ff, 1.0 / (d_ff as f64).sqrt(), rng),
            b_ff2: Array1::zeros(d),
            ln2_gamma: Array1::ones(d),
            ln2_beta: Array1::zeros(d),
        }
    }

    fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.len());
        LayerParams {
            wq: z2(&self.wq),
            bq: z1(&self.bq),
            wk: z2(&self.wk),
            bk: z1(&self.bk),
            wv: z2(&self.wv),
            bv: z1(&self.bv),
            wo: z2(&self.wo),
            bo: z1(&self.bo),
            ln1_gamma: z1(&self.ln1_gamma),
            ln1_beta: z1(&self.ln1_beta),
            w_ff1: z2(&self.w_ff1),
            b_ff1: z1(&self.b_ff1),
            w_ff2: z2(&self.w_ff2),
            b_ff2: z1(&self.b_ff2),
            ln2_gamma: z1(&self.ln2_gamma),
            ln2_beta: z1(&self.ln2_beta),
        }
    }

    param_fields!(
        "wq" => wq, "bq" => bq, "wk" => wk, "bk" => bk,
        "wv" => wv, "bv" => bv, "wo" => wo, "bo" => bo,
        "ln1_gamma" => ln1_gamma, "ln1_beta" => ln1_beta,
        "w_ff1" => w_ff1, "b_ff1" => b_ff1, "w_ff2" => w_ff2, "b_ff2" => b_ff2,
        "ln2_gamma" => ln2_gamma, "ln2_beta" => ln2_beta,
    );
}

/// Base (upstream) encoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub arch: ArchShape,
    pub frontend: Frontend,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(arch: &ArchShape, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let d = arch.d_model;
        let frontend = Frontend {
            w: init_matrix(d, arch.feat_dim, 1.0 / (arch.feat_dim as f64).sqrt(), rng),
            b: Array1::zeros(d),
        };
        let layers = (0..arch.layers).map(|_| LayerParams::new(d, arch.d_ff, rng)).collect();
        Ok(EncoderParams { arch: arch.clone(), frontend, layers })
    }

    pub(crate) fn zeros_like(&self) -> Self {
        EncoderParams {
            arch: self.arch.clone(),
            frontend: Frontend {
                w: Array2::zeros(self.frontend.w.raw_dim()),
                b: Array1::zeros(self.frontend.b.len()),
            },
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn blocks(&self) -> Vec<BlockRef<'_>> {
        let mut out: Vec<BlockRef<'_>> = self
            .frontend
            .block_views()
            .into_iter()
            .map(|(n, v)| BlockRef { name: format!("frontend.{n}"), group: Group::Frontend, data: v })
            .collect();
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend(layer.block_views().into_iter().map(|(n, v)| BlockRef {
                name: format!("block.{l}.{n}"),
                group: Group::Base { layer: l },
                data: v,
            }));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out: Vec<BlockMut<'_>> = self
            .frontend
            .block_views_mut()
            .into_iter()
            .map(|(n, v)| BlockMut { name: format!("frontend.{n}"), group: Group::Frontend, data: v })
            .collect();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.extend(layer.block_views_mut().into_iter().map(|(n, v)| BlockMut {
                name: format!("block.{l}.{n}"),
                group: Group::Base { layer: l },
                data: v,
            }));
        }
        out
    }
}

/// Prediction target of the downstream head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Four emotion categories.
    Classification,
    /// Joint valence, arousal, dominance.
    Regression,
}

impl Task {
    pub fn output_dim(self) -> usize {
        match self {
            Task::Classification => 4,
            Task::Regression => 3,
        }
    }
}

/// Two fully connected layers with a ReLU between. Always trainable and
/// never counted as an adaptor.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamHead {
    pub task: Task,
    /// `d × d`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `out × d`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl DownstreamHead {
    pub fn new<R: Rng + ?Sized>(d: usize, task: Task, rng: &mut R) -> Self {
        let out = task.output_dim();
        DownstreamHead {
            task,
            w1: init_matrix(d, d, (2.0 / d as f64).sqrt(), rng),
            b1: Array1::zeros(d),
            w2: init_matrix(out, d, (1.0 / d as f64).sqrt(), rng),
            b2: Array1::zeros(out),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub(crate) fn zeros_like(&self) -> Self {
        DownstreamHead {
            task: self.task,
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.len()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.len()),
        }
    }

    param_fields!("w1" => w1, "b1" => b1, "w2" => w2, "b2" => b2);

    pub fn blocks(&self) -> Vec<BlockRef<'_>> {
        self.block_views()
            .into_iter()
            .map(|(n, v)| BlockRef { name: format!("head.{n}"), group: Group::Head, data: v })
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        self.block_views_mut()
            .into_iter()
            .map(|(n, v)| BlockMut { name: format!("head.{n}"), group: Group::Head, data: v })
            .collect()
    }
}
