//! Trainable-parameter budgets of every adaptor combination at full
//! upstream sizes, checked against the published figures.
//!
//! cargo run --example audit_params

use peftlab::adapters::{count_params, AdapterFlags, AdapterHyper, AdapterSet, ParamCounts};
use peftlab::encoder::ArchShape;
use peftlab::training::audit_published;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> peftlab::Result<()> {
    let table = audit_published()?;
    print!("{}", table.render());
    println!();
    print!("{}", table.to_csv());
    println!("all auditable cells pass: {}", table.all_pass());

    // The table is built from instantiated adaptors; the closed form agrees.
    let arch = ArchShape::wav2vec2_base();
    let hyper = AdapterHyper::default();
    let aset = AdapterSet::new(&arch, AdapterFlags::ALL, hyper, &mut ChaCha8Rng::seed_from_u64(0))?;
    let counted = count_params(&aset, &arch)?;
    assert_eq!(counted, ParamCounts::closed_form(&arch, AdapterFlags::ALL, hyper));
    println!("wav2vec2-base, m=64 r=24: {counted:?}");
    Ok(())
}
