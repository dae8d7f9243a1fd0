//! Transformer forward pass with adaptor injection, and its reverse pass.
//!
//! Per block, for input `X`:
//!
//! ```text
//! Q, K, V = X·W{q,k,v}ᵀ + b (+ X·Aᵀ·Bᵀ with LoRA)
//! A1      = LN1(X + MHA(Q, K, V)·Woᵀ + bo)
//! F       = GELU(A1·W1ᵀ + b1)·W2ᵀ + b2
//! F'      = BA(F)                       (bottleneck + residual, if enabled)
//! Y       = LN2(A1 + F')
//! out     = σ(g) ⊙ Y                    (weight gating, if enabled)
//! ```

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::{EncoderParams, LayerParams};
use crate::adapters::{AdapterSet, LoraTarget};
use crate::error::{PeftError, Result};
use crate::ops;

/// Cached activations of one block.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub(crate) input: Array2<f64>,
    pub(crate) q: Array2<f64>,
    pub(crate) k: Array2<f64>,
    pub(crate) v: Array2<f64>,
    /// `X·Aᵀ` for query, key, value when LoRA is on.
    pub(crate) lora_down: Option<[Array2<f64>; 3]>,
    /// Attention probabilities per head, each `T × T`.
    pub attention: Vec<Array2<f64>>,
    pub(crate) context: Array2<f64>,
    pub(crate) xhat1: Array2<f64>,
    pub(crate) inv_std1: Array1<f64>,
    pub(crate) a1: Array2<f64>,
    pub(crate) ff_pre: Array2<f64>,
    pub(crate) ff_act: Array2<f64>,
    pub(crate) ff_out: Array2<f64>,
    pub(crate) ba_pre: Option<Array2<f64>>,
    pub(crate) xhat2: Array2<f64>,
    pub(crate) inv_std2: Array1<f64>,
    /// Block output before gating.
    pub(crate) y: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub(crate) frames: Array2<f64>,
    pub layers: Vec<LayerTrace>,
    /// Every block's (gated) output; `states[l]` feeds block `l + 1`.
    pub states: Vec<Array2<f64>>,
}

/// Which parameter gradients a reverse pass must produce.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GradRequest {
    pub frontend: bool,
    pub base: bool,
    pub ba: bool,
    pub lora: bool,
    pub ws: bool,
    pub wg: bool,
    pub head: bool,
}

impl GradRequest {
    pub fn all() -> Self {
        GradRequest { frontend: true, base: true, ba: true, lora: true, ws: true, wg: true, head: true }
    }

    fn needs_layer_internals(&self) -> bool {
        self.frontend || self.base || self.ba || self.lora
    }
}

pub(crate) fn check_frames(frames: ArrayView2<f64>, params: &EncoderParams) -> Result<()> {
    let arch = &params.arch;
    let (t, f) = frames.dim();
    if t == 0 {
        return Err(PeftError::input("utterance has no frames"));
    }
    if t > arch.max_frames {
        return Err(PeftError::input(format!("{t} frames exceeds max_frames {}", arch.max_frames)));
    }
    if f != arch.feat_dim {
        return Err(PeftError::input(format!("feature dim {f} != expected {}", arch.feat_dim)));
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(PeftError::input("frames contain non-finite values"));
    }
    Ok(())
}

/// Returns every block's output hidden states for one utterance.
pub fn encode(frames: ArrayView2<f64>, params: &EncoderParams, aset: &AdapterSet) -> Result<Vec<Array2<f64>>> {
    Ok(encode_traced(frames, params, aset)?.states)
}

pub(crate) fn frontend_forward(frames: ArrayView2<f64>, params: &EncoderParams) -> Array2<f64> {
    let mut x = frames.dot(&params.frontend.w.t()) + &params.frontend.b;
    if params.arch.positional_encoding {
        x += &ops::sinusoidal_positions(frames.nrows(), params.arch.d_model);
    }
    x
}

pub fn encode_traced(frames: ArrayView2<f64>, params: &EncoderParams, aset: &AdapterSet) -> Result<EncoderTrace> {
    check_frames(frames, params)?;
    aset.validate(&params.arch)?;
    let mut x = frontend_forward(frames, params);
    let mut layers = Vec::with_capacity(params.layers.len());
    let mut states = Vec::with_capacity(params.layers.len());
    for (l, lp) in params.layers.iter().enumerate() {
        let trace = layer_forward(l, x, lp, aset, params.arch.heads);
        let out = match aset.gates.as_ref().and_then(|g| g.gate_values(l)) {
            Some(gate) => &trace.y * &gate,
            None => trace.y.clone(),
        };
        layers.push(trace);
        states.push(out.clone());
        x = out;
    }
    Ok(EncoderTrace { frames: frames.to_owned(), layers, states })
}

fn project(
    x: &Array2<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
    aset: &AdapterSet,
    layer: usize,
    target: LoraTarget,
) -> (Array2<f64>, Option<Array2<f64>>) {
    let mut y = x.dot(&w.t()) + b;
    let down = aset.lora_at(layer).map(|lora| {
        let f = lora.get(target);
        let xa = f.down(x.view());
        y += &xa.dot(&f.b.t());
        xa
    });
    (y, down)
}

fn layer_forward(l: usize, x: Array2<f64>, lp: &LayerParams, aset: &AdapterSet, heads: usize) -> LayerTrace {
    let (t, d) = x.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (q, q_down) = project(&x, &lp.wq, &lp.bq, aset, l, LoraTarget::Query);
    let (k, k_down) = project(&x, &lp.wk, &lp.bk, aset, l, LoraTarget::Key);
    let (v, v_down) = project(&x, &lp.wv, &lp.bv, aset, l, LoraTarget::Value);
    let lora_down = match (q_down, k_down, v_down) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };

    let mut context = Array2::zeros((t, d));
    let mut attention = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        ops::softmax_rows(&mut scores);
        context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        attention.push(scores);
    }
    let attn_out = context.dot(&lp.wo.t()) + &lp.bo;
    let r1 = &x + &attn_out;
    let (a1, xhat1, inv_std1) = ops::layer_norm(r1.view(), lp.ln1_gamma.view(), lp.ln1_beta.view());

    let ff_pre = a1.dot(&lp.w_ff1.t()) + &lp.b_ff1;
    let ff_act = ff_pre.mapv(ops::gelu);
    let ff_out = ff_act.dot(&lp.w_ff2.t()) + &lp.b_ff2;

    let (adapted, ba_pre) = match aset.bottleneck_at(l) {
        Some(ba) => {
            let (out, pre) = ba.forward_cached(ff_out.view(), aset.hyper.activation);
            (out, Some(pre))
        }
        None => (ff_out.clone(), None),
    };
    let r2 = &a1 + &adapted;
    let (y, xhat2, inv_std2) = ops::layer_norm(r2.view(), lp.ln2_gamma.view(), lp.ln2_beta.view());

    LayerTrace {
        input: x,
        q,
        k,
        v,
        lora_down,
        attention,
        context,
        xhat1,
        inv_std1,
        a1,
        ff_pre,
        ff_act,
        ff_out,
        ba_pre,
        xhat2,
        inv_std2,
        y,
    }
}

/// Reverse pass through the encoder.
///
/// `d_states[l]` is the loss gradient arriving directly at block `l`'s
/// output (from pooling or a reconstruction head). Gradients for the
/// requested groups are accumulated into `grads` / `agrads`.
pub(crate) fn encode_backward(
    params: &EncoderParams,
    aset: &AdapterSet,
    trace: &EncoderTrace,
    mut d_states: Vec<Option<Array2<f64>>>,
    req: &GradRequest,
    grads: &mut EncoderParams,
    agrads: &mut AdapterSet,
) {
    let n = params.layers.len();
    let lowest_gate = aset.gates.as_ref().and_then(|g| g.sites.iter().min().copied());
    let lowest_needed = if req.needs_layer_internals() {
        Some(0)
    } else if req.wg {
        lowest_gate
    } else {
        None
    };
    let Some(lowest_needed) = lowest_needed else {
        return;
    };
    let top = match d_states.iter().rposition(Option::is_some) {
        Some(t) => t,
        None => return,
    };

    let mut carry: Option<Array2<f64>> = None;
    for l in (lowest_needed..=top.min(n - 1)).rev() {
        let dout = match (carry.take(), d_states[l].take()) {
            (Some(a), Some(b)) => a + &b,
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => continue,
        };
        let lt = &trace.layers[l];
        let dy = match aset.gates.as_ref().and_then(|g| g.site_index(l)) {
            Some(i) => {
                let gate = aset.gates.as_ref().unwrap().gates[i].mapv(ops::sigmoid);
                if req.wg {
                    let local = gate.mapv(|s| s * (1.0 - s));
                    let dg = (&dout * &lt.y).sum_axis(Axis(0)) * &local;
                    agrads.gates.as_mut().unwrap().gates[i] += &dg;
                }
                &dout * &gate
            }
            None => dout,
        };
        if l == lowest_needed && !req.needs_layer_internals() {
            break;
        }
        let dx = layer_backward(l, &params.layers[l], aset, lt, dy, req, &mut grads.layers[l], agrads, params.arch.heads);
        if l == 0 {
            if req.frontend {
                grads.frontend.w += &dx.t().dot(&trace.frames);
                grads.frontend.b += &dx.sum_axis(Axis(0));
            }
        } else {
            carry = Some(dx);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    l: usize,
    lp: &LayerParams,
    aset: &AdapterSet,
    lt: &LayerTrace,
    dy: Array2<f64>,
    req: &GradRequest,
    g: &mut LayerParams,
    agrads: &mut AdapterSet,
    heads: usize,
) -> Array2<f64> {
    let base = req.base;
    let dr2 = ops::layer_norm_backward(
        dy.view(),
        lt.xhat2.view(),
        lt.inv_std2.view(),
        lp.ln2_gamma.view(),
        base.then_some((&mut g.ln2_gamma, &mut g.ln2_beta)),
    );
    let mut da1 = dr2.clone();
    let dff_out = match (aset.bottleneck_at(l), &lt.ba_pre) {
        (Some(ba), Some(pre)) => {
            let grad = if req.ba { agrads.bottleneck.get_mut(l) } else { None };
            ba.backward(lt.ff_out.view(), pre.view(), dr2.view(), aset.hyper.activation, grad)
        }
        _ => dr2,
    };
    if base {
        g.w_ff2 += &dff_out.t().dot(&lt.ff_act);
        g.b_ff2 += &dff_out.sum_axis(Axis(0));
    }
    let dff_act = dff_out.dot(&lp.w_ff2);
    let dff_pre = &dff_act * &lt.ff_pre.mapv(ops::gelu_grad);
    if base {
        g.w_ff1 += &dff_pre.t().dot(&lt.a1);
        g.b_ff1 += &dff_pre.sum_axis(Axis(0));
    }
    da1 += &dff_pre.dot(&lp.w_ff1);

    let dr1 = ops::layer_norm_backward(
        da1.view(),
        lt.xhat1.view(),
        lt.inv_std1.view(),
        lp.ln1_gamma.view(),
        base.then_some((&mut g.ln1_gamma, &mut g.ln1_beta)),
    );
    let mut dx = dr1.clone();
    if base {
        g.wo += &dr1.t().dot(&lt.context);
        g.bo += &dr1.sum_axis(Axis(0));
    }
    let dcontext = dr1.dot(&lp.wo);

    let (t, d) = lt.input.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros((t, d));
    let mut dk = Array2::zeros((t, d));
    let mut dv = Array2::zeros((t, d));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let p = &lt.attention[h];
        let dc = dcontext.slice(cols);
        let dp = dc.dot(&lt.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dc));
        let row_dot = (&dp * p).sum_axis(Axis(1));
        let ds = (&dp - &row_dot.insert_axis(Axis(1))) * p * scale;
        dq.slice_mut(cols).assign(&ds.dot(&lt.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&lt.q.slice(cols)));
    }

    let x = lt.input.view();
    let projections = [
        (LoraTarget::Query, &dq, &lp.wq),
        (LoraTarget::Key, &dk, &lp.wk),
        (LoraTarget::Value, &dv, &lp.wv),
    ];
    for (i, (target, dproj, w)) in projections.into_iter().enumerate() {
        dx += &dproj.dot(w);
        if base {
            let (gw, gb) = match target {
                LoraTarget::Query => (&mut g.wq, &mut g.bq),
                LoraTarget::Key => (&mut g.wk, &mut g.bk),
                LoraTarget::Value => (&mut g.wv, &mut g.bv),
            };
            *gw += &dproj.t().dot(&x);
            *gb += &dproj.sum_axis(Axis(0));
        }
        if let (Some(lora), Some(downs)) = (aset.lora_at(l), &lt.lora_down) {
            let grad = if req.lora { agrads.lora.get_mut(l).map(|gl| gl.get_mut(target)) } else { None };
            dx += &lora.get(target).backward(x, downs[i].view(), dproj.view(), grad);
        }
    }
    dx
}
