//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::time::{Duration, Instant};

use ndarray::Array2;
use peftlab::adaptation::{AdaptationStudy, StageTwoFreeze};
use peftlab::adapters::{lora_apply, lora_merge, AdapterFlags, AdapterHyper, AdapterSet, LoraFactors, LoraTarget};
use peftlab::data::{generate_corpus, split_losso, CorpusSpec};
use peftlab::encoder::{encode, ArchShape, EncoderParams, Model, Task};
use peftlab::experiment::{adaptation_study, toy_hyper, train_table, ExperimentConfig, ResultsTable};
use peftlab::metrics::ccc;
use peftlab::training::{audit_published, build_mask, grad_check, grad_check_scaled, train, FreezePolicy, TrainConfig, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Experiment seed for criteria 7 to 9.
const SEED: u64 = 1;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    under(limit, start.elapsed())
}

fn under(limit: Duration, took: Duration) -> Result<Duration, String> {
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:.1?}, limit {limit:?}"))
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn audit() -> Outcome {
    let start = Instant::now();
    let table = audit_published().map_err(|e| e.to_string())?;
    let took = within(Duration::from_secs(1), start)?;
    let expected = [
        ("WS", [12, 24]),
        ("WG", [12 * 768, 24 * 1024]),
        ("BA", [12 * (2 * 768 * 64 + 64 + 768), 24 * (2 * 1024 * 64 + 64 + 1024)]),
        ("LoRA", [3 * 12 * 24 * 1536, 3 * 24 * 24 * 2048]),
    ];
    for (label, exact) in expected {
        let row = table.rows.iter().find(|r| r.label == label).ok_or(format!("no {label} row"))?;
        for (c, e) in row.cells.iter().zip(exact) {
            if c.exact != e {
                return Err(format!("{label} {}: {} != {e}", c.preset, c.exact));
            }
        }
    }
    let auditable: Vec<_> = table.cells().filter(|(r, _)| r.label != "FT" && r.label != "PT").collect();
    let passed = auditable.iter().filter(|(_, c)| c.verdict == Verdict::Pass).count();
    check(
        passed == auditable.len() && passed == 14,
        format!("{passed}/{} adaptor cells match at published precision ({took:.1?})", auditable.len()),
        format!("{passed}/{} cells pass", auditable.len()),
    )
}

fn identity_at_init() -> Outcome {
    let start = Instant::now();
    let arch = ArchShape::toy();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = EncoderParams::new(&arch, &mut rng).map_err(|e| e.to_string())?;
    let flags = AdapterFlags { ba: true, lora: true, ws: false, wg: false };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let aset = AdapterSet::new(&arch, flags, toy_hyper(), &mut rng).map_err(|e| e.to_string())?;
        let t = rng.random_range(1..=40);
        let x = random(t, arch.feat_dim, &mut rng);
        let a = encode(x.view(), &base, &AdapterSet::empty()).map_err(|e| e.to_string())?;
        let b = encode(x.view(), &base, &aset).map_err(|e| e.to_string())?;
        for (p, q) in a.iter().zip(&b) {
            worst = p.iter().zip(q).map(|(u, v)| (u - v).abs()).fold(worst, f64::max);
        }
    }
    let took = within(Duration::from_secs(10), start)?;
    check(worst <= 1e-6, format!("max |Δ| {worst:.1e} over 100 inputs ({took:.1?})"), format!("max |Δ| {worst:e}"))
}

fn lora_merge_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(2..=64);
        let k = rng.random_range(2..=64);
        let r = rng.random_range(1..d.min(k));
        let mut f = LoraFactors::new(d, k, r, LoraTarget::Query, &mut rng).map_err(|e| e.to_string())?;
        f.a = random(r, k, &mut rng);
        f.b = random(d, r, &mut rng);
        let w = random(d, k, &mut rng);
        let x = random(rng.random_range(1..=16), k, &mut rng);
        let factored = lora_apply(x.view(), w.view(), &f).map_err(|e| e.to_string())?;
        let merged = x.dot(&lora_merge(w.view(), &f).map_err(|e| e.to_string())?.t());
        let num = (&factored - &merged).mapv(|v| v * v).sum().sqrt();
        let den = merged.mapv(|v| v * v).sum().sqrt();
        worst = worst.max(num / den);
    }
    check(worst < 1e-5, format!("max relative error {worst:.1e} over 100 draws"), format!("relative error {worst:e}"))
}

fn gradient_oracle() -> Outcome {
    let arch = ArchShape { layers: 2, d_model: 16, heads: 2, d_ff: 32, feat_dim: 6, max_frames: 16, positional_encoding: true };
    let mut worst = 0.0f64;
    let mut corrupted = f64::INFINITY;
    for task in [Task::Classification, Task::Regression] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = Model::new(&arch, AdapterFlags::ALL, AdapterHyper::new(4, 2), task, &mut rng).map_err(|e| e.to_string())?;
        for mut b in m.adapters.blocks_mut() {
            b.data.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
        }
        let x = random(5, 6, &mut rng);
        worst = worst.max(grad_check(&m, x.view(), 1e-5).map_err(|e| e.to_string())?.max_rel_error);
        corrupted = corrupted.min(grad_check_scaled(&m, x.view(), 1e-5, 1.1).map_err(|e| e.to_string())?.max_rel_error);
    }
    check(
        worst < 1e-4 && corrupted >= 1e-4,
        format!("max relative error {worst:.1e}; +10% gradient gives {corrupted:.1e}"),
        format!("honest {worst:e}, corrupted {corrupted:e}"),
    )
}

fn freeze_soundness() -> Outcome {
    let arch = ArchShape::toy();
    let corpus = generate_corpus(&CorpusSpec { per_cell: 3, ..CorpusSpec::acted(4) }).map_err(|e| e.to_string())?;
    let split = split_losso(&corpus, 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = EncoderParams::new(&arch, &mut rng).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() };
    let mut policies = vec![("PT", FreezePolicy::pt()), ("FT", FreezePolicy::ft())];
    let names = ["(∗,∗)", "(✓,∗)", "(∗,✓)", "(✓,✓)"];
    policies.extend(names.iter().zip(StageTwoFreeze::MATRIX).map(|(n, f)| (*n, f.policy())));
    let mut checked = 0;
    for (name, policy) in policies {
        let flags = policy.required_adapters();
        let mut model = Model::from_encoder(base.clone(), flags, toy_hyper(), Task::Classification, &mut rng).map_err(|e| e.to_string())?;
        // Off-zero adaptors so a stray update could not hide behind a zero gradient.
        for mut b in model.adapters.blocks_mut() {
            b.data.mapv_inplace(|v| v + rng.random_range(-0.05..0.05));
        }
        let mask = build_mask(&policy, &model).map_err(|e| e.to_string())?;
        let out = train(&model, &split.train, &split.val, &cfg, &policy).map_err(|e| e.to_string())?;
        let before = model.blocks();
        let after = out.model.blocks();
        let mut moved_in_mask = false;
        for (b, a) in before.iter().zip(&after) {
            let same = b.data.iter().zip(a.data.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
            if mask.contains(&b.name) {
                moved_in_mask |= !same;
            } else if !same {
                return Err(format!("{name}: frozen block {} changed", b.name));
            }
            checked += 1;
        }
        if !moved_in_mask {
            return Err(format!("{name}: nothing trainable moved"));
        }
    }
    Ok(format!("6 policies, {checked} blocks compared bitwise after 2 epochs"))
}

fn metric_correctness() -> Outcome {
    let x = [1.0, 2.0, 3.0];
    let unit = [
        (ccc(&x, &x), 1.0),
        (ccc(&[3.0, 2.0, 1.0], &x), -1.0),
        (ccc(&[2.0, 3.0, 4.0], &x), 4.0 / 7.0),
    ];
    for (got, want) in unit {
        let got = got.map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("ccc {got} != {want}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(3..80);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c = rng.random_range(-4.0..4.0);
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let got = ccc(&shifted, &y).map_err(|e| e.to_string())?;
        worst = worst.max((got - 2.0 * var / (2.0 * var + c * c)).abs());
    }
    check(worst <= 1e-9, format!("unit cases exact; mean-shift law within {worst:.1e} over 1000 draws"), format!("law off by {worst:e}"))
}

fn toy_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: SEED,
        fold: Some(1),
        policies: vec![FreezePolicy::pt(), FreezePolicy::peft(AdapterFlags::ALL)],
        ..Default::default()
    }
}

fn run_toy() -> Result<ResultsTable, String> {
    let cfg = toy_config();
    cfg.validate().map_err(|e| e.to_string())?;
    let base = cfg.base_encoder().map_err(|e| e.to_string())?;
    let acted = generate_corpus(&cfg.acted_spec()).map_err(|e| e.to_string())?;
    train_table(&base, &acted, &cfg, |_, _| Ok(())).map_err(|e| e.to_string())
}

fn toy_classification(table: &ResultsTable, took: Duration) -> Outcome {
    under(Duration::from_secs(300), took)?;
    let pt = table.rows[0].mean.acc.ok_or("no PT accuracy")?;
    let peft = table.rows[1].mean.acc.ok_or("no PEFT accuracy")?;
    check(
        peft >= 0.9 && pt < peft,
        format!("PEFT {:.1}% vs PT {:.1}% on fold 1 ({took:.1?})", 100.0 * peft, 100.0 * pt),
        format!("PEFT {peft}, PT {pt}"),
    )
}

fn run_adapt() -> Result<AdaptationStudy, String> {
    let cfg = ExperimentConfig { seed: SEED, fold: Some(1), ..Default::default() };
    cfg.validate().map_err(|e| e.to_string())?;
    let base = cfg.base_encoder().map_err(|e| e.to_string())?;
    let acted = generate_corpus(&cfg.acted_spec()).map_err(|e| e.to_string())?;
    let natural = generate_corpus(&cfg.natural_spec()).map_err(|e| e.to_string())?;
    adaptation_study(&base, &acted, &natural, &cfg).map_err(|e| e.to_string())
}

fn adaptation_direction(study: &AdaptationStudy, took: Duration) -> Outcome {
    under(Duration::from_secs(1800), took)?;
    if study.seeds.len() != 5 {
        return Err(format!("{} seeds", study.seeds.len()));
    }
    let zero = study.median_zero_shot_target().ok_or("no zero-shot")?;
    let mut lines = Vec::new();
    for f in StageTwoFreeze::MATRIX {
        let t = study.median_stage2_target(f).ok_or("no stage-2 target")?;
        if t <= zero {
            return Err(format!("{f:?}: median target {t} <= zero-shot {zero}"));
        }
        lines.push(format!("{:.1}", 100.0 * t));
    }
    let frozen = study.median_forgetting(StageTwoFreeze::BOTH_FROZEN).ok_or("no forgetting")?;
    let updated = study.median_forgetting(StageTwoFreeze::BOTH_UPDATED).ok_or("no forgetting")?;
    check(
        frozen <= updated,
        format!(
            "median target after stage 2 [{}]% > zero-shot {:.1}%; forgetting frozen {frozen:+.3} <= updated {updated:+.3} ({took:.1?})",
            lines.join(", "),
            100.0 * zero
        ),
        format!("forgetting frozen {frozen} > updated {updated}"),
    )
}

fn determinism(first: &(ResultsTable, AdaptationStudy)) -> Outcome {
    let toy = run_toy()?;
    let study = run_adapt()?;
    let same_toy = json(&toy) == json(&first.0);
    let same_study = json(&study) == json(&first.1);
    check(
        same_toy && same_study,
        "reruns of the toy table and the adaptation study are bit-identical".into(),
        format!("toy identical: {same_toy}, study identical: {same_study}"),
    )
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serialisable")
}

fn report(n: usize, name: &str, outcome: &Outcome) -> bool {
    match outcome {
        Ok(detail) => println!("criterion {n} {name:<28} PASS  {detail}"),
        Err(why) => println!("criterion {n} {name:<28} FAIL  {why}"),
    }
    outcome.is_ok()
}

fn main() {
    let mut all = true;
    all &= report(1, "parameter audit", &audit());
    all &= report(2, "identity at init", &identity_at_init());
    all &= report(3, "LoRA merge equivalence", &lora_merge_equivalence());
    all &= report(4, "gradient oracle", &gradient_oracle());
    all &= report(5, "freeze soundness", &freeze_soundness());
    all &= report(6, "metric correctness", &metric_correctness());

    let start = Instant::now();
    let toy = run_toy();
    let toy_took = start.elapsed();
    let c7 = toy.as_ref().map_err(Clone::clone).and_then(|t| toy_classification(t, toy_took));
    all &= report(7, "toy classification", &c7);

    let start = Instant::now();
    let study = run_adapt();
    let study_took = start.elapsed();
    let c8 = study.as_ref().map_err(Clone::clone).and_then(|s| adaptation_direction(s, study_took));
    all &= report(8, "two-stage direction", &c8);

    let c9 = match (toy, study) {
        (Ok(t), Ok(s)) => determinism(&(t, s)),
        _ => Err("criteria 7 or 8 did not produce results".into()),
    };
    all &= report(9, "determinism", &c9);

    if !all {
        std::process::exit(1);
    }
}
