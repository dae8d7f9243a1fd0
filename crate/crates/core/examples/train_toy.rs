//! Pretrains the toy encoder on unlabelled data, then trains the PT
//! baseline and the all-four PEFT model on fold 1 of the acted corpus.
//! Saves the PEFT checkpoint and reloads it.
//!
//! cargo run --release --example train_toy [seed]

use peftlab::adapters::AdapterFlags;
use peftlab::data::generate_corpus;
use peftlab::experiment::{train_table, ExperimentConfig};
use peftlab::training::{evaluate, load_checkpoint, save_checkpoint, FreezePolicy};

fn main() -> peftlab::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = ExperimentConfig {
        seed,
        fold: Some(1),
        policies: vec![FreezePolicy::pt(), FreezePolicy::peft(AdapterFlags::ALL)],
        ..Default::default()
    };
    cfg.validate()?;
    let base = cfg.base_encoder()?;
    let acted = generate_corpus(&cfg.acted_spec())?;
    let dir = std::env::temp_dir().join(format!("peftlab-train-toy-{seed}"));
    std::fs::create_dir_all(&dir)?;

    let mut saved = None;
    let table = train_table(&base, &acted, &cfg, |policy, run| {
        println!("{:?}: best epoch {}, val curve {:?}", policy.mode, run.history.best_epoch,
            run.history.epochs.iter().map(|e| e.val_metric).collect::<Vec<_>>());
        if policy.required_adapters().any() {
            let path = dir.join("peft.json");
            save_checkpoint(&path, &run.model, Some(&cfg.train_config()), Some(policy))?;
            saved = Some((path, run.test.clone()));
        }
        Ok(())
    })?;
    print!("{}", table.render());
    print!("{}", table.to_csv());

    if let Some((path, score)) = saved {
        let model = load_checkpoint(&path)?.restore()?;
        let split = peftlab::data::split_losso(&acted, 1)?;
        assert_eq!(evaluate(&model, &split.test)?, score);
        println!("reloaded {} and reproduced the test score", path.display());
    }
    Ok(())
}
