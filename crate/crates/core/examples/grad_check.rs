//! Backprop through every adaptor against central finite differences,
//! plus the same check on a gradient deliberately scaled by 1.1.
//!
//! cargo run --example grad_check

use peftlab::adapters::{AdapterFlags, AdapterHyper};
use peftlab::encoder::{ArchShape, Model, Task};
use peftlab::training::{grad_check, grad_check_scaled};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> peftlab::Result<()> {
    let arch = ArchShape { layers: 2, d_model: 16, heads: 2, d_ff: 32, feat_dim: 6, max_frames: 16, positional_encoding: true };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = Model::new(&arch, AdapterFlags::ALL, AdapterHyper::new(4, 2), Task::Classification, &mut rng)?;
    // Zero-initialised factors would hide half the chain rule.
    for mut b in model.adapters.blocks_mut() {
        b.data.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
    let frames = ndarray::Array2::from_shape_fn((5, 6), |_| rng.random_range(-1.0..1.0));

    let report = grad_check(&model, frames.view(), 1e-5)?;
    for b in &report.blocks {
        println!("{:<20} {:.3e}", b.name, b.rel_error);
    }
    println!("max relative error {:.3e} (pass < 1e-4: {})", report.max_rel_error, report.passes(1e-4));

    let bad = grad_check_scaled(&model, frames.view(), 1e-5, 1.1)?;
    println!("with a +10% gradient: {:.3e} (detected: {})", bad.max_rel_error, !bad.passes(1e-4));
    Ok(())
}
