use approx::assert_relative_eq;
use ndarray::Array2;
use peftlab::adapters::{
    bottleneck_forward, count_params, lora_apply, lora_merge, weight_gate, AdapterFlags, AdapterHyper, AdapterSet,
    BottleneckAdapter, GateVector, LayerWeights, LoraFactors, LoraTarget, ParamCounts,
};
use peftlab::data::{generate_corpus, split_losso, CorpusSpec};
use peftlab::encoder::ArchShape;
use peftlab::metrics::ccc;
use peftlab::training::{round_sig, LinearSchedule};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> Array2<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn population_variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ccc_mean_shift_law(y in prop::collection::vec(-10.0f64..10.0, 3..60), c in -5.0f64..5.0) {
        let var = population_variance(&y);
        prop_assume!(var > 1e-3);
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let law = 2.0 * var / (2.0 * var + c * c);
        prop_assert!((ccc(&shifted, &y).unwrap() - law).abs() <= 1e-9);
    }

    #[test]
    fn ccc_is_bounded_and_symmetric(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40)
    ) {
        let (p, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(population_variance(&p) > 1e-6 && population_variance(&a) > 1e-6);
        let c = ccc(&p, &a).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert!((c - ccc(&a, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn layer_weights_softmax_normalises(raw in prop::collection::vec(-30.0f64..30.0, 1..32)) {
        let alpha = LayerWeights::from_raw(raw).softmax();
        prop_assert!(alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
        prop_assert!((alpha.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gate_output_never_exceeds_input(g in -20.0f64..20.0, seed in any::<u64>()) {
        let h = matrix(4, 6, seed, 5.0);
        let gates = GateVector::filled(6, vec![0], g);
        let values = gates.gate_values(0).unwrap();
        prop_assert!(values.iter().all(|&v| v > 0.0 && v < 1.0));
        let out = weight_gate(h.view(), &gates, 0).unwrap();
        prop_assert!(out.iter().zip(h.iter()).all(|(o, x)| o.abs() <= x.abs()));
    }

    #[test]
    fn lora_merge_matches_factored(d in 2usize..=64, k in 2usize..=64, seed in any::<u64>()) {
        let r = 1 + (seed as usize) % (d.min(k) - 1).max(1);
        prop_assume!(r < d.min(k));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = LoraFactors::new(d, k, r, LoraTarget::Value, &mut rng).unwrap();
        f.b = matrix(d, r, seed ^ 1, 1.0);
        let w = matrix(d, k, seed ^ 2, 1.0);
        let x = matrix(5, k, seed ^ 3, 1.0);
        let factored = lora_apply(x.view(), w.view(), &f).unwrap();
        let merged = x.dot(&lora_merge(w.view(), &f).unwrap().t());
        let err = (&factored - &merged).mapv(|v| v * v).sum().sqrt() / merged.mapv(|v| v * v).sum().sqrt().max(1e-300);
        prop_assert!(err < 1e-5);
    }

    #[test]
    fn bottleneck_is_identity_at_init(d in 2usize..=64, seed in any::<u64>()) {
        let m = 1 + (seed as usize) % (d / 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ba = BottleneckAdapter::new(d, m, &mut rng).unwrap();
        let h = matrix(3, d, seed, 3.0);
        prop_assert_eq!(bottleneck_forward(h.view(), &ba, Default::default()).unwrap(), h);
    }

    #[test]
    fn counts_are_exact(layers in 1usize..6, heads in 1usize..4, width in 1usize..8, m_pick in any::<u16>(), r_pick in any::<u16>()) {
        let d = heads * width * 2;
        let arch = ArchShape { layers, d_model: d, heads, d_ff: 2 * d, feat_dim: 3, max_frames: 8, positional_encoding: true };
        let m = 1 + m_pick as usize % (d / 2);
        let r = 1 + r_pick as usize % (d - 1);
        let hyper = AdapterHyper::new(m, r);
        let aset = AdapterSet::new(&arch, AdapterFlags::ALL, hyper, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let counted = count_params(&aset, &arch).unwrap();
        let (l, d, m, r) = (layers as u64, d as u64, m as u64, r as u64);
        prop_assert_eq!(counted, ParamCounts { ba: l * (2 * d * m + m + d), lora: 6 * l * r * d, ws: l, wg: l * d });
        prop_assert_eq!(counted, ParamCounts::closed_form(&arch, AdapterFlags::ALL, hyper));
    }

    #[test]
    fn losso_split_partitions(sessions in 2usize..6, per_cell in 1usize..12, fold_pick in any::<u8>()) {
        let spec = CorpusSpec { sessions, per_cell, min_frames: 2, max_frames: 3, feat_dim: 4, ..CorpusSpec::acted(5) };
        let corpus = generate_corpus(&spec).unwrap();
        let fold = 1 + fold_pick as usize % sessions;
        let s = split_losso(&corpus, fold).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), corpus.len());
        prop_assert!(s.test.iter().all(|u| u.session == fold));
        prop_assert!(s.train.iter().chain(s.val.iter()).all(|u| u.session != fold));
        // floor(n_c / 10) per class, n_c = (sessions - 1) · per_cell.
        prop_assert_eq!(s.val.len(), 4 * ((sessions - 1) * per_cell / 10));
    }

    #[test]
    fn schedule_decays_linearly(lr in 1e-6f64..1.0, total in 1usize..500, t in 0usize..600) {
        let s = LinearSchedule::new(lr, total);
        prop_assert_eq!(s.lr_at(0), lr);
        prop_assert_eq!(s.lr_at(total), 0.0);
        let expected = lr * (1.0 - t.min(total) as f64 / total as f64);
        prop_assert!((s.lr_at(t) - expected).abs() <= 1e-15);
        prop_assert!(s.lr_at(t + 1) <= s.lr_at(t));
    }

    #[test]
    fn round_sig_is_idempotent(n in 0u64..10_000_000_000, sig in 1u32..5) {
        let r = round_sig(n, sig);
        prop_assert_eq!(round_sig(r, sig), r);
        prop_assert!((r as f64 - n as f64).abs() <= 0.5 * 10f64.powi((n.max(1).ilog10() + 1).saturating_sub(sig) as i32));
    }
}

#[test]
fn lora_merge_relative_error_is_tiny() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut f = LoraFactors::new(64, 64, 24, LoraTarget::Query, &mut rng).unwrap();
    f.b = matrix(64, 24, 10, 1.0);
    let w = matrix(64, 64, 11, 1.0);
    let x = matrix(8, 64, 12, 1.0);
    let factored = lora_apply(x.view(), w.view(), &f).unwrap();
    let merged = x.dot(&lora_merge(w.view(), &f).unwrap().t());
    assert_relative_eq!(factored, merged, max_relative = 1e-12);
}
