use ndarray::{ArrayView2, ArrayViewD};
use serde::{Deserialize, Serialize};

use crate::encoder::{GradRequest, Model};
use crate::error::Result;
use crate::params::GroupKind;

/// Gradient norms below this count as zero. The key-bias gradient is
/// identically zero by softmax shift invariance.
pub const ZERO_NORM: f64 = 1e-9;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`; 0 when both norms are below [`ZERO_NORM`].
pub fn relative_error(analytic: ArrayViewD<f64>, numeric: ArrayViewD<f64>) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric.iter()).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < ZERO_NORM {
        0.0
    } else {
        diff / scale
    }
}

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps` for every coordinate.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Probe loss: half the squared norm of the head output.
fn probe_loss(model: &Model, frames: ArrayView2<f64>) -> Result<f64> {
    let out = model.predict(frames)?;
    Ok(0.5 * out.dot(&out))
}

/// Compares backprop against central differences for every adaptor block
/// on a fixed scalar loss. The analytic gradient is multiplied by `scale`
/// before comparison; `1.0` is the honest check.
pub fn grad_check_scaled(model: &Model, frames: ArrayView2<f64>, eps: f64, scale: f64) -> Result<GradCheckReport> {
    let kinds = [GroupKind::Bottleneck, GroupKind::Lora, GroupKind::WeightedSum, GroupKind::Gate];
    grad_check_kinds(model, frames, eps, scale, &kinds)
}

/// As [`grad_check_scaled`], over blocks of the listed kinds.
pub fn grad_check_kinds(
    model: &Model,
    frames: ArrayView2<f64>,
    eps: f64,
    scale: f64,
    kinds: &[GroupKind],
) -> Result<GradCheckReport> {
    let pass = model.forward(frames)?;
    let mut grads = model.zeros_like();
    let has = |k| kinds.contains(&k);
    let req = GradRequest {
        frontend: has(GroupKind::Frontend),
        base: has(GroupKind::Base),
        ba: has(GroupKind::Bottleneck),
        lora: has(GroupKind::Lora),
        ws: has(GroupKind::WeightedSum),
        wg: has(GroupKind::Gate),
        head: has(GroupKind::Head),
    };
    model.backward(&pass, pass.output().view(), &req, &mut grads);

    let mut probe = model.clone();
    let mut blocks = Vec::new();
    let analytic_blocks = grads.blocks();
    for (index, analytic) in analytic_blocks.iter().enumerate() {
        if !kinds.contains(&analytic.group.kind()) {
            continue;
        }
        let n = analytic.data.len();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let orig = nth(&mut probe, index, i, None);
            nth(&mut probe, index, i, Some(orig + eps));
            let up = probe_loss(&probe, frames)?;
            nth(&mut probe, index, i, Some(orig - eps));
            let down = probe_loss(&probe, frames)?;
            nth(&mut probe, index, i, Some(orig));
            numeric.push((up - down) / (2.0 * eps));
        }
        let scaled = analytic.data.mapv(|g| g * scale);
        let numeric = ndarray::ArrayD::from_shape_vec(analytic.data.raw_dim(), numeric).expect("same length");
        blocks.push(BlockError { name: analytic.name.clone(), rel_error: relative_error(scaled.view(), numeric.view()) });
    }
    let max_rel_error = blocks.iter().map(|b| b.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { blocks, max_rel_error })
}

/// Reads element `i` of block `index`, optionally overwriting it first.
fn nth(model: &mut Model, index: usize, i: usize, set: Option<f64>) -> f64 {
    let mut blocks = model.blocks_mut();
    let slot = blocks[index].data.iter_mut().nth(i).expect("index within block");
    if let Some(v) = set {
        *slot = v;
    }
    *slot
}

pub fn grad_check(model: &Model, frames: ArrayView2<f64>, eps: f64) -> Result<GradCheckReport> {
    grad_check_scaled(model, frames, eps, 1.0)
}
