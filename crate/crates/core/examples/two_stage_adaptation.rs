//! Acted-to-natural adaptation: stage 1 on acted speech, stage 2 on
//! natural speech under each BA/LoRA freeze combination.
//!
//! cargo run --release --example two_stage_adaptation [seeds]

use peftlab::adaptation::StageTwoFreeze;
use peftlab::data::generate_corpus;
use peftlab::experiment::{adaptation_study, AdaptSetup, ExperimentConfig};

fn main() -> peftlab::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let cfg = ExperimentConfig {
        seed: 1,
        fold: Some(1),
        adapt: AdaptSetup { seeds: Some((1..=n).collect()), ..Default::default() },
        ..Default::default()
    };
    cfg.validate()?;
    let base = cfg.base_encoder()?;
    let acted = generate_corpus(&cfg.acted_spec())?;
    let natural = generate_corpus(&cfg.natural_spec())?;
    let study = adaptation_study(&base, &acted, &natural, &cfg)?;
    print!("{}", study.render());

    println!("median zero-shot on natural: {:.4}", study.median_zero_shot_target().unwrap());
    for f in StageTwoFreeze::MATRIX {
        let [ba, lora, ..] = f.policy().flag_cells();
        println!(
            "BA {ba} LoRA {lora}: median natural {:.4}, median forgetting {:+.4}",
            study.median_stage2_target(f).unwrap(),
            study.median_forgetting(f).unwrap()
        );
    }
    Ok(())
}
