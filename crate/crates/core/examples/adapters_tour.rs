//! Each adaptor kind on its own: identity at initialisation, LoRA factor
//! vs merged forward, the weighted sum's softmax, and gate bounds.
//!
//! cargo run --example adapters_tour

use ndarray::Array2;
use peftlab::adapters::{
    bottleneck_forward, lora_apply, lora_merge, weight_gate, weighted_sum, AdapterFlags, AdapterSet, BottleneckAdapter,
    GateVector, LayerWeights, LoraFactors, LoraTarget,
};
use peftlab::encoder::{encode, ArchShape, EncoderParams};
use peftlab::experiment::toy_hyper;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn main() -> peftlab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let arch = ArchShape::toy();
    let base = EncoderParams::new(&arch, &mut rng)?;
    let frames = random(16, arch.feat_dim, &mut rng);

    let bare = encode(frames.view(), &base, &AdapterSet::empty())?;
    for flags in AdapterFlags::table_rows() {
        let aset = AdapterSet::new(&arch, flags, toy_hyper(), &mut rng)?;
        let with = encode(frames.view(), &base, &aset)?;
        let gap = bare.iter().zip(&with).map(|(a, b)| max_abs_diff(a, b)).fold(0.0, f64::max);
        // Gates start at 0.5, so WG halves block outputs by design.
        println!("{:<16} max |Δ| over block outputs at init: {gap:.3e}", flags.label());
    }

    let h = random(5, 64, &mut rng);
    let ba = BottleneckAdapter::new(64, 16, &mut rng)?;
    let out = bottleneck_forward(h.view(), &ba, Default::default())?;
    println!("bottleneck at init returns its input: {}", out == h);

    let w = random(48, 32, &mut rng);
    let mut f = LoraFactors::new(48, 32, 8, LoraTarget::Query, &mut rng)?;
    f.b = random(48, 8, &mut rng);
    let x = random(7, 32, &mut rng);
    let factored = lora_apply(x.view(), w.view(), &f)?;
    let merged = x.dot(&lora_merge(w.view(), &f)?.t());
    println!("LoRA factored vs merged: max |Δ| = {:.3e}", max_abs_diff(&factored, &merged));

    let lw = LayerWeights::from_raw(vec![0.3, -1.2, 2.0, 0.0]);
    let alpha = lw.softmax();
    println!("weighted-sum coefficients {alpha:.4} sum to {:.15}", alpha.sum());
    let states: Vec<Array2<f64>> = (0..4).map(|_| random(3, 8, &mut rng)).collect();
    let mixed = weighted_sum(&states, &lw)?;
    println!("weighted sum shape {:?}", mixed.shape());

    let gates = GateVector::filled(8, vec![0, 1], 40.0);
    let gated = weight_gate(states[0].view(), &gates, 0)?;
    let ratio = gated.iter().zip(states[0].iter()).map(|(g, s)| if *s != 0.0 { g / s } else { 0.0 }).fold(0.0, f64::max);
    println!("gate at raw value 40 passes at most {ratio:.6} of each unit");
    Ok(())
}
