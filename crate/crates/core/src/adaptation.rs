//! Two-stage domain adaptation: PEFT on an acted source corpus, then
//! continued training on a natural target corpus with BA and/or LoRA
//! optionally frozen.
//!
//! Stage 2 continues from the stage-1 adaptors and head. Adam moments are
//! reset and the learning-rate schedule restarts.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterFlags, AdapterHyper};
use crate::data::Split;
use crate::encoder::{EncoderParams, Model, Task};
use crate::error::{PeftError, Result};
use crate::metrics::EvalResult;
use crate::training::{evaluate, train, FreezePolicy, History, TrainConfig};

/// Which of BA and LoRA stay frozen in stage 2. WS, WG and the head always
/// train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTwoFreeze {
    pub freeze_ba: bool,
    pub freeze_lora: bool,
}

impl StageTwoFreeze {
    pub const BOTH_FROZEN: Self = StageTwoFreeze { freeze_ba: true, freeze_lora: true };
    pub const BOTH_UPDATED: Self = StageTwoFreeze { freeze_ba: false, freeze_lora: false };

    /// Table order: (∗,∗), (✓,∗), (∗,✓), (✓,✓) for (BA, LoRA).
    pub const MATRIX: [Self; 4] = [
        Self::BOTH_FROZEN,
        StageTwoFreeze { freeze_ba: false, freeze_lora: true },
        StageTwoFreeze { freeze_ba: true, freeze_lora: false },
        Self::BOTH_UPDATED,
    ];

    pub fn policy(self) -> FreezePolicy {
        FreezePolicy::stage_two(self.freeze_ba, self.freeze_lora)
    }
}

/// A labelled corpus split under a display name.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainData {
    pub name: String,
    pub split: Split,
}

/// Shared settings for every run of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub hyper: AdapterHyper,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    /// Each seed sets adaptor/head initialisation and minibatch order.
    pub seeds: Vec<u64>,
}

impl StagePlan {
    fn validate(&self, source: &DomainData, target: &DomainData) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.stage1.task != self.stage2.task {
            return Err(PeftError::config("both stages must share one task"));
        }
        if self.seeds.is_empty() {
            return Err(PeftError::config("an adaptation study needs at least one seed"));
        }
        let dim = |d: &DomainData| d.split.train.feat_dim();
        if dim(source) != dim(target) {
            return Err(PeftError::config(format!(
                "source features {:?} and target features {:?} differ",
                dim(source),
                dim(target)
            )));
        }
        Ok(())
    }
}

/// A stage-1 model scored on both test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOne {
    pub trained_on: String,
    pub on_source: EvalResult,
    pub on_target: EvalResult,
    pub checksum: u64,
    pub history: History,
}

/// One stage-2 run against the stage-1 model it continued from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub seed: u64,
    pub freeze: StageTwoFreeze,
    pub policy: FreezePolicy,
    pub stage1_source: EvalResult,
    /// Stage-1 model on the target test set.
    pub zero_shot_target: EvalResult,
    pub stage2_source: EvalResult,
    pub stage2_target: EvalResult,
    /// `stage1_source − stage2_source` on the primary metric.
    pub forgetting: f64,
    pub stage1_checksum: u64,
    pub history: History,
}

/// Result of one seed: both single-domain stage-1 runs and every stage-2
/// continuation of the source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMatrix {
    pub seed: u64,
    pub source_only: StageOne,
    pub target_only: StageOne,
    pub stage2: Vec<AdaptationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationStudy {
    pub source: String,
    pub target: String,
    pub task: Task,
    pub seeds: Vec<SeedMatrix>,
}

fn stage_one(base: &EncoderParams, train_on: &DomainData, plan: &StagePlan, seed: u64) -> Result<(Model, History)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::from_encoder(base.clone(), AdapterFlags::ALL, plan.hyper, plan.stage1.task, &mut rng)?;
    let cfg = TrainConfig { seed, ..plan.stage1.clone() };
    let split = &train_on.split;
    let out = train(&model, &split.train, &split.val, &cfg, &FreezePolicy::peft(AdapterFlags::ALL))?;
    Ok((out.model, out.history))
}

fn score(model: &Model, trained_on: &DomainData, history: History, source: &DomainData, target: &DomainData) -> Result<StageOne> {
    Ok(StageOne {
        trained_on: trained_on.name.clone(),
        on_source: evaluate(model, &source.split.test)?,
        on_target: evaluate(model, &target.split.test)?,
        checksum: model.checksum(),
        history,
    })
}

/// Continues `stage1` on the target domain under `freeze`.
pub fn continue_on_target(
    stage1: &Model,
    source: &DomainData,
    target: &DomainData,
    plan: &StagePlan,
    seed: u64,
    freeze: StageTwoFreeze,
) -> Result<AdaptationReport> {
    let policy = freeze.policy();
    let cfg = TrainConfig { seed, ..plan.stage2.clone() };
    let out = train(stage1, &target.split.train, &target.split.val, &cfg, &policy)?;
    let stage1_source = evaluate(stage1, &source.split.test)?;
    let stage2_source = evaluate(&out.model, &source.split.test)?;
    Ok(AdaptationReport {
        seed,
        freeze,
        policy,
        forgetting: stage1_source.primary() - stage2_source.primary(),
        stage1_source,
        zero_shot_target: evaluate(stage1, &target.split.test)?,
        stage2_source,
        stage2_target: evaluate(&out.model, &target.split.test)?,
        stage1_checksum: stage1.checksum(),
        history: out.history,
    })
}

/// Stage 1 on `source` from `base`, then stage 2 on `target`.
pub fn run_two_stage(
    base: &EncoderParams,
    source: &DomainData,
    target: &DomainData,
    plan: &StagePlan,
    seed: u64,
    freeze: StageTwoFreeze,
) -> Result<AdaptationReport> {
    plan.validate(source, target)?;
    let (stage1, _) = stage_one(base, source, plan, seed)?;
    continue_on_target(&stage1, source, target, plan, seed, freeze)
}

/// Every freeze combination for one seed, sharing a single stage-1 model.
pub fn freeze_matrix(
    base: &EncoderParams,
    source: &DomainData,
    target: &DomainData,
    plan: &StagePlan,
    seed: u64,
) -> Result<SeedMatrix> {
    plan.validate(source, target)?;
    let (src_model, src_hist) = stage_one(base, source, plan, seed)?;
    let (tgt_model, tgt_hist) = stage_one(base, target, plan, seed)?;
    let stage2 = StageTwoFreeze::MATRIX
        .iter()
        .map(|&f| continue_on_target(&src_model, source, target, plan, seed, f))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedMatrix {
        seed,
        source_only: score(&src_model, source, src_hist, source, target)?,
        target_only: score(&tgt_model, target, tgt_hist, source, target)?,
        stage2,
    })
}

/// [`freeze_matrix`] over every seed of the plan. Seeds run on the current
/// rayon pool; results keep seed order.
pub fn run_study(base: &EncoderParams, source: &DomainData, target: &DomainData, plan: &StagePlan) -> Result<AdaptationStudy> {
    plan.validate(source, target)?;
    let seeds = plan.seeds.par_iter().map(|&s| freeze_matrix(base, source, target, plan, s)).collect::<Result<Vec<_>>>()?;
    Ok(AdaptationStudy { source: source.name.clone(), target: target.name.clone(), task: plan.stage1.task, seeds })
}

/// Middle value; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// One line of the adaptation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// A seed, or `median`.
    pub seed: String,
    pub source: String,
    pub target: String,
    pub policy: FreezePolicy,
    pub source_metric: f64,
    pub target_metric: f64,
    pub source_zero_shot: bool,
    pub target_zero_shot: bool,
}

impl AdaptationStudy {
    pub fn reports(&self, freeze: StageTwoFreeze) -> impl Iterator<Item = &AdaptationReport> {
        self.seeds.iter().flat_map(move |s| s.stage2.iter().filter(move |r| r.freeze == freeze))
    }

    pub fn median_zero_shot_target(&self) -> Option<f64> {
        median(&self.seeds.iter().map(|s| s.source_only.on_target.primary()).collect::<Vec<_>>())
    }

    pub fn median_stage2_target(&self, freeze: StageTwoFreeze) -> Option<f64> {
        median(&self.reports(freeze).map(|r| r.stage2_target.primary()).collect::<Vec<_>>())
    }

    pub fn median_forgetting(&self, freeze: StageTwoFreeze) -> Option<f64> {
        median(&self.reports(freeze).map(|r| r.forgetting).collect::<Vec<_>>())
    }

    /// Stage-1 runs then stage-2 combinations, each as (source, target).
    fn row_values(s: &SeedMatrix) -> Vec<(f64, f64)> {
        let mut v = vec![
            (s.source_only.on_source.primary(), s.source_only.on_target.primary()),
            (s.target_only.on_source.primary(), s.target_only.on_target.primary()),
        ];
        v.extend(s.stage2.iter().map(|r| (r.stage2_source.primary(), r.stage2_target.primary())));
        v
    }

    /// Median rows over `seeds`.
    fn block(&self, label: &str, seeds: &[SeedMatrix]) -> Vec<TableRow> {
        let all = FreezePolicy::peft(AdapterFlags::ALL);
        let mut shapes = vec![
            ("PT".to_string(), self.source.clone(), all, false, true),
            ("PT".to_string(), self.target.clone(), all, true, false),
        ];
        for f in StageTwoFreeze::MATRIX {
            shapes.push((self.source.clone(), self.target.clone(), f.policy(), false, false));
        }
        let values: Vec<Vec<(f64, f64)>> = seeds.iter().map(Self::row_values).collect();
        shapes
            .into_iter()
            .enumerate()
            .map(|(i, (source, target, policy, source_zero_shot, target_zero_shot))| {
                let src: Vec<f64> = values.iter().map(|v| v[i].0).collect();
                let tgt: Vec<f64> = values.iter().map(|v| v[i].1).collect();
                TableRow {
                    seed: label.to_string(),
                    source,
                    target,
                    policy,
                    source_metric: median(&src).unwrap_or(f64::NAN),
                    target_metric: median(&tgt).unwrap_or(f64::NAN),
                    source_zero_shot,
                    target_zero_shot,
                }
            })
            .collect()
    }

    /// Six rows per seed and six median rows. Each block has the two
    /// stage-1 runs followed by the four stage-2 freeze combinations.
    pub fn table(&self) -> Vec<TableRow> {
        let mut rows: Vec<TableRow> =
            self.seeds.iter().flat_map(|s| self.block(&s.seed.to_string(), std::slice::from_ref(s))).collect();
        rows.extend(self.block("median", &self.seeds));
        rows
    }

    fn metric_name(&self) -> &'static str {
        match self.task {
            Task::Classification => "acc",
            Task::Regression => "ccc",
        }
    }

    /// Accuracy in percent with two decimals; CCC with three.
    pub fn format_metric(&self, v: f64) -> String {
        match self.task {
            Task::Classification => format!("{:.2}", 100.0 * v),
            Task::Regression => format!("{v:.3}"),
        }
    }

    pub fn to_csv(&self) -> String {
        let (src, tgt) = match self.task {
            Task::Classification => ("source_acc", "target_acc"),
            Task::Regression => ("source_ccc", "target_ccc"),
        };
        let header = ["seed", "source", "target", "ba", "lora", "ws", "wg", src, tgt, "source_zero_shot", "target_zero_shot"];
        let rows = self.table().into_iter().map(|r| {
            let mut fields = vec![r.seed, r.source, r.target];
            fields.extend(r.policy.flag_cells().map(String::from));
            fields.push(self.format_metric(r.source_metric));
            fields.push(self.format_metric(r.target_metric));
            fields.push(r.source_zero_shot.to_string());
            fields.push(r.target_zero_shot.to_string());
            fields
        });
        crate::table::csv_string(&header, rows)
    }

    /// Fixed-width table; zero-shot cells are wrapped in underscores.
    pub fn render(&self) -> String {
        let m = self.metric_name();
        let cell = |v: f64, zero: bool| {
            let s = self.format_metric(v);
            if zero {
                format!("_{s}_")
            } else {
                s
            }
        };
        let mut out = String::new();
        writeln!(
            out,
            "{:<8}{:<10}{:<10}{:<4}{:<6}{:<4}{:<4}{:>16}{:>16}",
            "seed",
            "source",
            "target",
            "BA",
            "LoRA",
            "WS",
            "WG",
            format!("{m} ({})", self.source),
            format!("{m} ({})", self.target)
        )
        .unwrap();
        for r in self.table() {
            let [ba, lora, ws, wg] = r.policy.flag_cells();
            writeln!(
                out,
                "{:<8}{:<10}{:<10}{:<4}{:<6}{:<4}{:<4}{:>16}{:>16}",
                r.seed,
                r.source,
                r.target,
                ba,
                lora,
                ws,
                wg,
                cell(r.source_metric, r.source_zero_shot),
                cell(r.target_metric, r.target_zero_shot)
            )
            .unwrap();
        }
        out.push_str("_x_ = zero-shot (not trained on that domain); ∗ = frozen, ✓ = updated\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, split_losso, CorpusSpec};
    use crate::encoder::ArchShape;
    use crate::params::GroupKind;

    fn small() -> (EncoderParams, DomainData, DomainData, StagePlan) {
        let arch = ArchShape { layers: 2, d_model: 16, heads: 2, d_ff: 32, feat_dim: 8, max_frames: 32, positional_encoding: true };
        let spec = |s: CorpusSpec| CorpusSpec { per_cell: 3, feat_dim: 8, ..s };
        let acted = generate_corpus(&spec(CorpusSpec::acted(3))).unwrap();
        let natural = generate_corpus(&spec(CorpusSpec::natural(3))).unwrap();
        let base = EncoderParams::new(&arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let plan = StagePlan {
            hyper: AdapterHyper::new(4, 2),
            stage1: TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() },
            stage2: TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() },
            seeds: vec![5, 6],
        };
        let d = |name: &str, c| DomainData { name: name.into(), split: split_losso(c, 1).unwrap() };
        (base, d("acted", &acted), d("natural", &natural), plan)
    }

    #[test]
    fn zero_epoch_all_frozen_reproduces_stage_one() {
        let (base, src, tgt, mut plan) = small();
        plan.stage2.epochs = 0;
        let r = run_two_stage(&base, &src, &tgt, &plan, 5, StageTwoFreeze::BOTH_FROZEN).unwrap();
        assert_eq!(r.stage2_source, r.stage1_source);
        assert_eq!(r.stage2_target, r.zero_shot_target);
        assert_eq!(r.forgetting, 0.0);
    }

    #[test]
    fn matrix_shares_stage_one_and_freezes_blocks() {
        let (base, src, tgt, plan) = small();
        let m = freeze_matrix(&base, &src, &tgt, &plan, 5).unwrap();
        assert_eq!(m.stage2.len(), 4);
        assert!(m.stage2.iter().all(|r| r.stage1_checksum == m.source_only.checksum));
        for r in &m.stage2 {
            let recomputed = r.stage1_source.primary() - r.stage2_source.primary();
            assert!((r.forgetting - recomputed).abs() <= 1e-12);
        }

        let (stage1, _) = stage_one(&base, &src, &plan, 5).unwrap();
        let cfg = TrainConfig { seed: 5, ..plan.stage2.clone() };
        let out = train(&stage1, &tgt.split.train, &tgt.split.val, &cfg, &StageTwoFreeze::BOTH_FROZEN.policy()).unwrap();
        let frozen = [GroupKind::Frontend, GroupKind::Base, GroupKind::Bottleneck, GroupKind::Lora];
        assert_eq!(out.model.checksum_of(&frozen), stage1.checksum_of(&frozen));
    }

    #[test]
    fn feature_mismatch_is_config_error() {
        let (base, src, _, plan) = small();
        let other = generate_corpus(&CorpusSpec { per_cell: 2, feat_dim: 5, ..CorpusSpec::natural(3) }).unwrap();
        let tgt = DomainData { name: "odd".into(), split: split_losso(&other, 1).unwrap() };
        let err = run_two_stage(&base, &src, &tgt, &plan, 0, StageTwoFreeze::BOTH_UPDATED);
        assert!(matches!(err, Err(PeftError::Config(_))));
    }

    #[test]
    fn table_and_csv_agree() {
        let (base, src, tgt, mut plan) = small();
        plan.stage1.epochs = 1;
        plan.stage2.epochs = 1;
        let study = run_study(&base, &src, &tgt, &plan).unwrap();
        let rows = study.table();
        assert_eq!(rows.len(), 18);
        let csv = study.to_csv();
        let text = study.render();
        for (r, line) in rows.iter().zip(csv.lines().skip(1)) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[7], study.format_metric(r.source_metric));
            assert!(text.contains(&study.format_metric(r.target_metric)));
        }
        assert!(rows[0].target_zero_shot && rows[1].source_zero_shot);
        assert_eq!(rows[2].policy.flag_cells(), ["∗", "∗", "✓", "✓"]);
        let json = serde_json::to_string(&study).unwrap();
        let back: AdaptationStudy = serde_json::from_str(&json).unwrap();
        assert_eq!(back, study);
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
