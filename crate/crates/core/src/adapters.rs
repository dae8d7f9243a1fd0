//! The four parameter-efficient adaptors and their forward, merge and count
//! semantics.
//!
//! Matrices follow the `out × in` convention: a projection `W` maps a row
//! vector `x` to `x·Wᵀ`. Frames are rows, so a `T × d` matrix holds `T`
//! hidden states.
//!
//! | adaptor | parameters per model |
//! |---------|----------------------|
//! | bottleneck | `L·(2dm + m + d)` |
//! | LoRA on q/k/v | `3·L·r·(d + k)` |
//! | weighted sum | `L` |
//! | weight gating | `L·d` |

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::encoder::ArchShape;
use crate::error::{PeftError, Result};
use crate::params::{param_fields, BlockRef, BlockMut, Group};

/// Attention projection a LoRA delta is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoraTarget {
    Query,
    Key,
    Value,
}

impl LoraTarget {
    pub const ALL: [LoraTarget; 3] = [LoraTarget::Query, LoraTarget::Key, LoraTarget::Value];

    pub fn as_str(self) -> &'static str {
        match self {
            LoraTarget::Query => "query",
            LoraTarget::Key => "key",
            LoraTarget::Value => "value",
        }
    }
}

/// Low-rank delta `ΔW = B·A` for one frozen `d × k` projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraFactors {
    /// Down factor, `r × k`.
    pub a: Array2<f64>,
    /// Up factor, `d × r`. Zero at init so the delta starts at zero.
    pub b: Array2<f64>,
    pub target: LoraTarget,
}

impl LoraFactors {
    pub fn new<R: Rng + ?Sized>(
        d: usize,
        k: usize,
        rank: usize,
        target: LoraTarget,
        rng: &mut R,
    ) -> Result<Self> {
        check_rank(d, k, rank)?;
        let bound = 0.01 / (rank as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let a = Array2::from_shape_fn((rank, k), |_| dist.sample(rng));
        Ok(LoraFactors {
            a,
            b: Array2::zeros((d, rank)),
            target,
        })
    }

    /// Builds factors from explicit matrices, validating the rank bound.
    pub fn from_parts(a: Array2<f64>, b: Array2<f64>, target: LoraTarget) -> Result<Self> {
        let (rank, k) = a.dim();
        let (d, rank_b) = b.dim();
        if rank != rank_b {
            return Err(PeftError::dim("lora B", format!("{d}x{rank}"), format!("{d}x{rank_b}")));
        }
        check_rank(d, k, rank)?;
        Ok(LoraFactors { a, b, target })
    }

    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn delta(&self) -> Array2<f64> {
        self.b.dot(&self.a)
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub(crate) fn zeros_like(&self) -> Self {
        LoraFactors {
            a: Array2::zeros(self.a.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
            target: self.target,
        }
    }

    param_fields!("a" => a, "b" => b);

    fn check_against(&self, w: ArrayView2<f64>) -> Result<()> {
        if w.dim() != (self.out_dim(), self.in_dim()) {
            return Err(PeftError::dim(
                "base weight",
                format!("{}x{}", self.out_dim(), self.in_dim()),
                format!("{}x{}", w.nrows(), w.ncols()),
            ));
        }
        Ok(())
    }

    /// `x·Aᵀ`, the rank-`r` bottleneck activations.
    pub(crate) fn down(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.a.t())
    }

    /// Accumulates `∂/∂A` and `∂/∂B` into `grad` and returns the delta path's
    /// contribution to `∂/∂x`. `xa` is the cached `x·Aᵀ`.
    pub(crate) fn backward(
        &self,
        x: ArrayView2<f64>,
        xa: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: Option<&mut LoraFactors>,
    ) -> Array2<f64> {
        let dxa = dy.dot(&self.b);
        if let Some(g) = grad {
            g.b += &dy.t().dot(&xa);
            g.a += &dxa.t().dot(&x);
        }
        dxa.dot(&self.a)
    }
}

fn check_rank(d: usize, k: usize, rank: usize) -> Result<()> {
    if rank == 0 || rank >= d.min(k) {
        return Err(PeftError::config(format!(
            "LoRA rank {rank} must satisfy 1 <= r < min(d, k) = {}",
            d.min(k)
        )));
    }
    Ok(())
}

/// Projects `x` (`T × k`) through `W + B·A` without materializing the merged
/// weight. `W` is read-only.
pub fn lora_apply(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    f: &LoraFactors,
) -> Result<Array2<f64>> {
    f.check_against(w)?;
    if x.ncols() != f.in_dim() {
        return Err(PeftError::dim("input x", format!("Tx{}", f.in_dim()), format!("{}x{}", x.nrows(), x.ncols())));
    }
    let mut out = x.dot(&w.t());
    out += &f.down(x).dot(&f.b.t());
    Ok(out)
}

/// Returns the merged weight `W + B·A`.
pub fn lora_merge(w: ArrayView2<f64>, f: &LoraFactors) -> Result<Array2<f64>> {
    f.check_against(w)?;
    Ok(&w + &f.delta())
}

/// Nonlinearity inside the bottleneck adaptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => crate::ops::gelu(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => crate::ops::gelu_grad(x),
        }
    }
}

/// Down-project, nonlinearity, up-project, wrapped in a residual.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckAdapter {
    /// `m × d`
    pub w_down: Array2<f64>,
    pub b_down: Array1<f64>,
    /// `d × m`; zero at init together with `b_up`.
    pub w_up: Array2<f64>,
    pub b_up: Array1<f64>,
}

impl BottleneckAdapter {
    pub fn new<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Result<Self> {
        check_bottleneck(d, m)?;
        let normal = Normal::new(0.0, 0.01).expect("finite std");
        Ok(BottleneckAdapter {
            w_down: Array2::from_shape_fn((m, d), |_| normal.sample(rng)),
            b_down: Array1::zeros(m),
            w_up: Array2::zeros((d, m)),
            b_up: Array1::zeros(d),
        })
    }

    pub fn from_parts(
        w_down: Array2<f64>,
        b_down: Array1<f64>,
        w_up: Array2<f64>,
        b_up: Array1<f64>,
    ) -> Result<Self> {
        let (m, d) = w_down.dim();
        if b_down.len() != m {
            return Err(PeftError::dim("b_down", m, b_down.len()));
        }
        if w_up.dim() != (d, m) {
            return Err(PeftError::dim("w_up", format!("{d}x{m}"), format!("{}x{}", w_up.nrows(), w_up.ncols())));
        }
        if b_up.len() != d {
            return Err(PeftError::dim("b_up", d, b_up.len()));
        }
        check_bottleneck(d, m)?;
        Ok(BottleneckAdapter { w_down, b_down, w_up, b_up })
    }

    pub fn dim(&self) -> usize {
        self.w_down.ncols()
    }

    pub fn bottleneck(&self) -> usize {
        self.w_down.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w_down.len() + self.b_down.len() + self.w_up.len() + self.b_up.len()
    }

    pub(crate) fn zeros_like(&self) -> Self {
        BottleneckAdapter {
            w_down: Array2::zeros(self.w_down.raw_dim()),
            b_down: Array1::zeros(self.b_down.len()),
            w_up: Array2::zeros(self.w_up.raw_dim()),
            b_up: Array1::zeros(self.b_up.len()),
        }
    }

    param_fields!("w_down" => w_down, "b_down" => b_down, "w_up" => w_up, "b_up" => b_up);

    /// Returns `(output, pre_activation)`; the pre-activation feeds `backward`.
    pub(crate) fn forward_cached(&self, h: ArrayView2<f64>, act: Activation) -> (Array2<f64>, Array2<f64>) {
        let pre = h.dot(&self.w_down.t()) + &self.b_down;
        let hidden = pre.mapv(|v| act.apply(v));
        let out = &h + &(hidden.dot(&self.w_up.t()) + &self.b_up);
        (out, pre)
    }

    /// Returns `∂/∂h` given `∂/∂output`.
    pub(crate) fn backward(
        &self,
        h: ArrayView2<f64>,
        pre: ArrayView2<f64>,
        dout: ArrayView2<f64>,
        act: Activation,
        grad: Option<&mut BottleneckAdapter>,
    ) -> Array2<f64> {
        let dhidden = dout.dot(&self.w_up);
        let dpre = &dhidden * &pre.mapv(|v| act.derivative(v));
        if let Some(g) = grad {
            let hidden = pre.mapv(|v| act.apply(v));
            g.w_up += &dout.t().dot(&hidden);
            g.b_up += &dout.sum_axis(Axis(0));
            g.w_down += &dpre.t().dot(&h);
            g.b_down += &dpre.sum_axis(Axis(0));
        }
        &dout + &dpre.dot(&self.w_down)
    }
}

fn check_bottleneck(d: usize, m: usize) -> Result<()> {
    if m == 0 || 2 * m > d {
        return Err(PeftError::config(format!(
            "bottleneck width {m} must satisfy 1 <= m <= d/2 (d = {d})"
        )));
    }
    Ok(())
}

/// `h + act(h·W_downᵀ + b_down)·W_upᵀ + b_up`, row-wise.
pub fn bottleneck_forward(
    h: ArrayView2<f64>,
    a: &BottleneckAdapter,
    act: Activation,
) -> Result<Array2<f64>> {
    if h.ncols() != a.dim() {
        return Err(PeftError::dim("hidden states", format!("Tx{}", a.dim()), format!("{}x{}", h.nrows(), h.ncols())));
    }
    Ok(a.forward_cached(h, act).0)
}

/// One raw (pre-softmax) scalar per transformer block output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w: Array1<f64>,
}

impl LayerWeights {
    /// Zero init, i.e. uniform mixing.
    pub fn new(layers: usize) -> Self {
        LayerWeights { w: Array1::zeros(layers) }
    }

    pub fn from_raw(w: Vec<f64>) -> Self {
        LayerWeights { w: Array1::from(w) }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn softmax(&self) -> Array1<f64> {
        crate::ops::softmax(self.w.view())
    }

    param_fields!("w" => w);
}

/// `Σ_i softmax(w)_i · states_i`.
pub fn weighted_sum(states: &[Array2<f64>], lw: &LayerWeights) -> Result<Array2<f64>> {
    if states.is_empty() {
        return Err(PeftError::config("weighted sum over an empty list of states"));
    }
    if states.len() != lw.len() {
        return Err(PeftError::config(format!(
            "weighted sum has {} weights but {} states",
            lw.len(),
            states.len()
        )));
    }
    let shape = states[0].raw_dim();
    if let Some(bad) = states.iter().find(|s| s.raw_dim() != shape) {
        return Err(PeftError::dim("states", format!("{:?}", states[0].shape()), format!("{:?}", bad.shape())));
    }
    let coeffs = lw.softmax();
    let mut out = Array2::zeros(shape);
    for (c, s) in coeffs.iter().zip(states) {
        out.scaled_add(*c, s);
    }
    Ok(out)
}

/// Gradient of the raw weights given `∂L/∂α_i` for the softmax outputs.
pub(crate) fn softmax_backward(alpha: &Array1<f64>, dalpha: &Array1<f64>) -> Array1<f64> {
    let dot = alpha.dot(dalpha);
    alpha * &(dalpha - dot)
}

/// Per-dimension sigmoid gates on selected layers' outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GateVector {
    /// One raw gate vector of length `d` per site.
    pub gates: Vec<Array1<f64>>,
    /// Layer index of each entry in `gates`.
    pub sites: Vec<usize>,
}

impl GateVector {
    /// Zero init (every gate at 0.5) on every listed site.
    pub fn new(d: usize, sites: Vec<usize>) -> Self {
        GateVector {
            gates: sites.iter().map(|_| Array1::zeros(d)).collect(),
            sites,
        }
    }

    pub fn filled(d: usize, sites: Vec<usize>, value: f64) -> Self {
        GateVector {
            gates: sites.iter().map(|_| Array1::from_elem(d, value)).collect(),
            sites,
        }
    }

    pub fn site_index(&self, layer: usize) -> Option<usize> {
        self.sites.iter().position(|&s| s == layer)
    }

    pub fn raw(&self, layer: usize) -> Option<&Array1<f64>> {
        self.site_index(layer).map(|i| &self.gates[i])
    }

    /// `σ(g)` for the given layer.
    pub fn gate_values(&self, layer: usize) -> Option<Array1<f64>> {
        self.raw(layer).map(|g| g.mapv(crate::ops::sigmoid))
    }

    pub fn param_count(&self) -> usize {
        self.gates.iter().map(|g| g.len()).sum()
    }
}

/// `σ(g) ⊙ h`, broadcast over frames.
pub fn weight_gate(h: ArrayView2<f64>, gv: &GateVector, layer: usize) -> Result<Array2<f64>> {
    let gate = gv
        .gate_values(layer)
        .ok_or_else(|| PeftError::config(format!("layer {layer} is not a gated site")))?;
    if gate.len() != h.ncols() {
        return Err(PeftError::dim("hidden states", format!("Tx{}", gate.len()), format!("{}x{}", h.nrows(), h.ncols())));
    }
    Ok(&h * &gate)
}

/// Which adaptor kinds are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterFlags {
    #[serde(default)]
    pub ba: bool,
    #[serde(default)]
    pub lora: bool,
    #[serde(default)]
    pub ws: bool,
    #[serde(default)]
    pub wg: bool,
}

impl AdapterFlags {
    pub const NONE: AdapterFlags = AdapterFlags { ba: false, lora: false, ws: false, wg: false };
    pub const ALL: AdapterFlags = AdapterFlags { ba: true, lora: true, ws: true, wg: true };

    pub fn any(&self) -> bool {
        self.ba || self.lora || self.ws || self.wg
    }

    /// The adaptor rows of the comparison table, in order.
    pub fn table_rows() -> Vec<AdapterFlags> {
        let f = |ba, lora, ws, wg| AdapterFlags { ba, lora, ws, wg };
        vec![
            f(true, false, false, false),
            f(false, true, false, false),
            f(false, false, true, false),
            f(false, false, false, true),
            f(true, true, false, false),
            f(true, true, true, false),
            f(true, true, true, true),
        ]
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.ba {
            parts.push("BA");
        }
        if self.lora {
            parts.push("LoRA");
        }
        if self.ws {
            parts.push("WS");
        }
        if self.wg {
            parts.push("WG");
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Adaptor sizes and the bottleneck nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterHyper {
    /// Bottleneck width `m`.
    #[serde(default = "default_bottleneck")]
    pub bottleneck: usize,
    /// LoRA rank `r`.
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default)]
    pub activation: Activation,
}

fn default_bottleneck() -> usize {
    64
}

fn default_rank() -> usize {
    24
}

impl Default for AdapterHyper {
    /// `m = 64`, `r = 24`: the sizes that reproduce the published budgets.
    fn default() -> Self {
        AdapterHyper {
            bottleneck: default_bottleneck(),
            rank: default_rank(),
            activation: Activation::Relu,
        }
    }
}

impl AdapterHyper {
    pub fn new(bottleneck: usize, rank: usize) -> Self {
        AdapterHyper { bottleneck, rank, activation: Activation::Relu }
    }
}

/// LoRA factors for the three attention projections of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer {
    pub query: LoraFactors,
    pub key: LoraFactors,
    pub value: LoraFactors,
}

impl LoraLayer {
    pub fn get(&self, t: LoraTarget) -> &LoraFactors {
        match t {
            LoraTarget::Query => &self.query,
            LoraTarget::Key => &self.key,
            LoraTarget::Value => &self.value,
        }
    }

    pub fn get_mut(&mut self, t: LoraTarget) -> &mut LoraFactors {
        match t {
            LoraTarget::Query => &mut self.query,
            LoraTarget::Key => &mut self.key,
            LoraTarget::Value => &mut self.value,
        }
    }
}

/// All adaptor parameters attached to one encoder.
///
/// Disabled kinds hold no parameters at all.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSet {
    pub flags: AdapterFlags,
    pub hyper: AdapterHyper,
    pub bottleneck: Vec<BottleneckAdapter>,
    pub lora: Vec<LoraLayer>,
    pub layer_weights: Option<LayerWeights>,
    pub gates: Option<GateVector>,
}

impl AdapterSet {
    pub fn empty() -> Self {
        AdapterSet {
            flags: AdapterFlags::NONE,
            hyper: AdapterHyper::default(),
            bottleneck: Vec::new(),
            lora: Vec::new(),
            layer_weights: None,
            gates: None,
        }
    }

    /// Fresh adaptors: LoRA `B = 0`, bottleneck `W_up = b_up = 0`, weighted
    /// sum uniform, gates at `σ(0) = 0.5`.
    pub fn new<R: Rng + ?Sized>(
        arch: &ArchShape,
        flags: AdapterFlags,
        hyper: AdapterHyper,
        rng: &mut R,
    ) -> Result<Self> {
        arch.validate()?;
        let d = arch.d_model;
        let bottleneck = if flags.ba {
            (0..arch.layers)
                .map(|_| BottleneckAdapter::new(d, hyper.bottleneck, rng))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let lora = if flags.lora {
            (0..arch.layers)
                .map(|_| {
                    Ok(LoraLayer {
                        query: LoraFactors::new(d, d, hyper.rank, LoraTarget::Query, rng)?,
                        key: LoraFactors::new(d, d, hyper.rank, LoraTarget::Key, rng)?,
                        value: LoraFactors::new(d, d, hyper.rank, LoraTarget::Value, rng)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(AdapterSet {
            flags,
            hyper,
            bottleneck,
            lora,
            layer_weights: flags.ws.then(|| LayerWeights::new(arch.layers)),
            gates: flags.wg.then(|| GateVector::new(d, (0..arch.layers).collect())),
        })
    }

    pub fn bottleneck_at(&self, layer: usize) -> Option<&BottleneckAdapter> {
        self.bottleneck.get(layer)
    }

    pub fn lora_at(&self, layer: usize) -> Option<&LoraLayer> {
        self.lora.get(layer)
    }

    pub(crate) fn zeros_like(&self) -> Self {
        AdapterSet {
            flags: self.flags,
            hyper: self.hyper,
            bottleneck: self.bottleneck.iter().map(BottleneckAdapter::zeros_like).collect(),
            lora: self
                .lora
                .iter()
                .map(|l| LoraLayer {
                    query: l.query.zeros_like(),
                    key: l.key.zeros_like(),
                    value: l.value.zeros_like(),
                })
                .collect(),
            layer_weights: self.layer_weights.as_ref().map(|lw| LayerWeights::new(lw.len())),
            gates: self.gates.as_ref().map(|g| GateVector {
                gates: g.gates.iter().map(|v| Array1::zeros(v.len())).collect(),
                sites: g.sites.clone(),
            }),
        }
    }

    /// Checks that the structure matches `arch`.
    pub fn validate(&self, arch: &ArchShape) -> Result<()> {
        let d = arch.d_model;
        let l = arch.layers;
        let expect_len = |name: &str, enabled: bool, len: usize| -> Result<()> {
            let want = if enabled { l } else { 0 };
            if len != want {
                return Err(PeftError::config(format!("{name} has {len} layers, expected {want}")));
            }
            Ok(())
        };
        expect_len("bottleneck adaptor", self.flags.ba, self.bottleneck.len())?;
        expect_len("LoRA", self.flags.lora, self.lora.len())?;
        if let Some(bad) = self.bottleneck.iter().find(|b| b.dim() != d) {
            return Err(PeftError::config(format!("bottleneck adaptor width {} != d_model {d}", bad.dim())));
        }
        for layer in &self.lora {
            for t in LoraTarget::ALL {
                let f = layer.get(t);
                if f.out_dim() != d || f.in_dim() != d {
                    return Err(PeftError::config(format!(
                        "LoRA {} factors are {}x{}, expected {d}x{d}",
                        t.as_str(),
                        f.out_dim(),
                        f.in_dim()
                    )));
                }
            }
        }
        match (&self.layer_weights, self.flags.ws) {
            (Some(lw), true) if lw.len() == l => {}
            (None, false) => {}
            (Some(lw), true) => {
                return Err(PeftError::config(format!("weighted sum has {} weights, expected {l}", lw.len())))
            }
            _ => return Err(PeftError::config("weighted-sum flag disagrees with its parameters")),
        }
        match (&self.gates, self.flags.wg) {
            (Some(g), true) => {
                if g.gates.len() != g.sites.len() {
                    return Err(PeftError::config("gate vector and site lists differ in length"));
                }
                if g.sites.iter().any(|&s| s >= l) {
                    return Err(PeftError::config("gate site beyond the last layer"));
                }
                if g.gates.iter().any(|v| v.len() != d) {
                    return Err(PeftError::config(format!("gate vectors must have length {d}")));
                }
            }
            (None, false) => {}
            _ => return Err(PeftError::config("weight-gating flag disagrees with its parameters")),
        }
        Ok(())
    }

    /// Flat named view of every adaptor block, in a fixed order.
    pub fn blocks(&self) -> Vec<BlockRef<'_>> {
        let mut out = Vec::new();
        for (l, ba) in self.bottleneck.iter().enumerate() {
            for (n, v) in ba.block_views() {
                out.push(BlockRef { name: format!("ba.{l}.{n}"), group: Group::Bottleneck { layer: l }, data: v });
            }
        }
        for (l, layer) in self.lora.iter().enumerate() {
            for t in LoraTarget::ALL {
                for (n, v) in layer.get(t).block_views() {
                    out.push(BlockRef {
                        name: format!("lora.{l}.{}.{n}", t.as_str()),
                        group: Group::Lora { layer: l, target: t },
                        data: v,
                    });
                }
            }
        }
        if let Some(lw) = &self.layer_weights {
            for (n, v) in lw.block_views() {
                out.push(BlockRef { name: format!("ws.{n}"), group: Group::WeightedSum, data: v });
            }
        }
        if let Some(g) = &self.gates {
            for (site, v) in g.sites.iter().zip(&g.gates) {
                out.push(BlockRef {
                    name: format!("wg.{site}.g"),
                    group: Group::Gate { layer: *site },
                    data: v.view().into_dyn(),
                });
            }
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = Vec::new();
        for (l, ba) in self.bottleneck.iter_mut().enumerate() {
            for (n, v) in ba.block_views_mut() {
                out.push(BlockMut { name: format!("ba.{l}.{n}"), group: Group::Bottleneck { layer: l }, data: v });
            }
        }
        for (l, layer) in self.lora.iter_mut().enumerate() {
            let LoraLayer { query, key, value } = layer;
            for f in [query, key, value] {
                let t = f.target;
                for (n, v) in f.block_views_mut() {
                    out.push(BlockMut {
                        name: format!("lora.{l}.{}.{n}", t.as_str()),
                        group: Group::Lora { layer: l, target: t },
                        data: v,
                    });
                }
            }
        }
        if let Some(lw) = &mut self.layer_weights {
            for (n, v) in lw.block_views_mut() {
                out.push(BlockMut { name: format!("ws.{n}"), group: Group::WeightedSum, data: v });
            }
        }
        if let Some(g) = &mut self.gates {
            for (site, v) in g.sites.iter().zip(g.gates.iter_mut()) {
                out.push(BlockMut {
                    name: format!("wg.{site}.g"),
                    group: Group::Gate { layer: *site },
                    data: v.view_mut().into_dyn(),
                });
            }
        }
        out
    }
}

/// Exact trainable-value counts per adaptor kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamCounts {
    pub ba: u64,
    pub lora: u64,
    pub ws: u64,
    pub wg: u64,
}

impl ParamCounts {
    pub fn total(&self) -> u64 {
        self.ba + self.lora + self.ws + self.wg
    }

    /// Closed-form counts for `flags` on `arch`, without allocating anything.
    pub fn closed_form(arch: &ArchShape, flags: AdapterFlags, hyper: AdapterHyper) -> Self {
        let l = arch.layers as u64;
        let d = arch.d_model as u64;
        let m = hyper.bottleneck as u64;
        let r = hyper.rank as u64;
        ParamCounts {
            ba: if flags.ba { l * (2 * d * m + m + d) } else { 0 },
            lora: if flags.lora { 3 * l * r * (d + d) } else { 0 },
            ws: if flags.ws { l } else { 0 },
            wg: if flags.wg { l * d } else { 0 },
        }
    }
}

/// Counts the adaptor parameters actually held by `aset`.
///
/// The downstream head is never part of an adaptor set, so it is excluded
/// by construction.
pub fn count_params(aset: &AdapterSet, arch: &ArchShape) -> Result<ParamCounts> {
    aset.validate(arch)?;
    Ok(ParamCounts {
        ba: aset.bottleneck.iter().map(|b| b.param_count() as u64).sum(),
        lora: aset
            .lora
            .iter()
            .flat_map(|l| LoraTarget::ALL.map(|t| l.get(t).param_count() as u64))
            .sum(),
        ws: aset.layer_weights.as_ref().map_or(0, |lw| lw.len() as u64),
        wg: aset.gates.as_ref().map_or(0, |g| g.param_count() as u64),
    })
}
