use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::params::DownstreamHead;
use crate::adapters::{softmax_backward, AdapterSet};
use crate::error::{PeftError, Result};

/// Cached values of the pool-then-head path.
#[derive(Debug, Clone)]
pub struct PoolTrace {
    /// Softmax mixing weights when the weighted sum is on.
    pub(crate) alpha: Option<Array1<f64>>,
    /// Frame means of every block output.
    pub(crate) means: Vec<Array1<f64>>,
    pub(crate) frames: usize,
    pub pooled: Array1<f64>,
    pub(crate) hidden_pre: Array1<f64>,
    pub(crate) hidden: Array1<f64>,
    pub output: Array1<f64>,
}

/// Mixes block outputs (weighted sum, or the last block alone), averages
/// over frames, then applies the two-layer head.
pub fn pool_and_predict(states: &[Array2<f64>], aset: &AdapterSet, head: &DownstreamHead) -> Result<Array1<f64>> {
    Ok(pool_traced(states, aset, head)?.output)
}

pub(crate) fn pool_traced(states: &[Array2<f64>], aset: &AdapterSet, head: &DownstreamHead) -> Result<PoolTrace> {
    let last = states.last().ok_or_else(|| PeftError::input("no hidden states to pool"))?;
    let (frames, d) = last.dim();
    if head.w1.ncols() != d {
        return Err(PeftError::dim("head input", head.w1.ncols(), d));
    }
    let means: Vec<Array1<f64>> = states
        .iter()
        .map(|s| s.mean_axis(Axis(0)).expect("frames >= 1"))
        .collect();
    let (alpha, pooled) = match &aset.layer_weights {
        Some(lw) => {
            if lw.len() != states.len() {
                return Err(PeftError::config(format!(
                    "weighted sum has {} weights but {} states",
                    lw.len(),
                    states.len()
                )));
            }
            let alpha = lw.softmax();
            let mut pooled = Array1::zeros(d);
            for (a, m) in alpha.iter().zip(&means) {
                pooled.scaled_add(*a, m);
            }
            (Some(alpha), pooled)
        }
        None => (None, means.last().unwrap().clone()),
    };
    let hidden_pre = head.w1.dot(&pooled) + &head.b1;
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let output = head.w2.dot(&hidden) + &head.b2;
    Ok(PoolTrace { alpha, means, frames, pooled, hidden_pre, hidden, output })
}

/// Back-propagates `doutput` through the head and pooling. Returns the
/// gradient reaching each block output (None where nothing flows).
pub(crate) fn pool_backward(
    trace: &PoolTrace,
    head: &DownstreamHead,
    doutput: ArrayView1<f64>,
    head_grad: Option<&mut DownstreamHead>,
    agrads: Option<&mut AdapterSet>,
    need_states: bool,
) -> Vec<Option<Array2<f64>>> {
    let dhidden = head.w2.t().dot(&doutput);
    let dpre = &dhidden * &trace.hidden_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    if let Some(g) = head_grad {
        g.w2 += &outer(doutput, trace.hidden.view());
        g.b2 += &doutput;
        g.w1 += &outer(dpre.view(), trace.pooled.view());
        g.b1 += &dpre;
    }
    let dpooled = head.w1.t().dot(&dpre);
    let n = trace.means.len();

    if let (Some(alpha), Some(ag)) = (&trace.alpha, agrads) {
        if let Some(lw) = ag.layer_weights.as_mut() {
            let dalpha = Array1::from_iter(trace.means.iter().map(|m| m.dot(&dpooled)));
            lw.w += &softmax_backward(alpha, &dalpha);
        }
    }
    if !need_states {
        return vec![None; n];
    }
    let per_frame = &dpooled / trace.frames as f64;
    let spread = |scale: f64| {
        let row = &per_frame * scale;
        row.broadcast((trace.frames, row.len())).unwrap().to_owned()
    };
    match &trace.alpha {
        Some(alpha) => alpha.iter().map(|&a| Some(spread(a))).collect(),
        None => {
            let mut out = vec![None; n];
            out[n - 1] = Some(spread(1.0));
            out
        }
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let col = a.insert_axis(Axis(1));
    let row = b.insert_axis(Axis(0));
    col.dot(&row)
}
