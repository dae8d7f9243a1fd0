//! Experiment configuration and the end-to-end pipelines behind the CLI:
//! corpus generation, pretraining of the shared base encoder, per-fold
//! training of every adaptor row, and the two-stage adaptation study.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{run_study, AdaptationStudy, DomainData, StagePlan};
use crate::adapters::{AdapterFlags, AdapterHyper, ParamCounts};
use crate::data::{generate_corpus, split_losso, Corpus, CorpusSpec};
use crate::encoder::{pretrain_base, ArchShape, EncoderParams, Model, PretrainConfig, Task};
use crate::error::{PeftError, Result};
use crate::metrics::{cv_mean, EvalResult};
use crate::training::{evaluate, render_count, train, FreezePolicy, History, Mode, TrainConfig};

/// Offset between the experiment seed and the seed of the unlabelled
/// pretraining corpus, so the base encoder never sees the evaluation world.
pub const PRETRAIN_WORLD_OFFSET: u64 = 1000;

/// A named preset or an explicit shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchChoice {
    Preset(String),
    Shape(ArchShape),
}

impl Default for ArchChoice {
    fn default() -> Self {
        ArchChoice::Preset("toy".into())
    }
}

impl ArchChoice {
    pub fn resolve(&self) -> Result<ArchShape> {
        let arch = match self {
            ArchChoice::Preset(name) => ArchShape::preset(name)?,
            ArchChoice::Shape(a) => a.clone(),
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Adaptor sizes for the toy encoder: `m ≤ d/2` rules out the full-size 64.
pub fn toy_hyper() -> AdapterHyper {
    AdapterHyper::new(16, 8)
}

/// Every row of the comparison table: PT, FT, then each adaptor combination.
pub fn table_policies() -> Vec<FreezePolicy> {
    let mut out = vec![FreezePolicy::pt(), FreezePolicy::ft()];
    out.extend(AdapterFlags::table_rows().into_iter().map(FreezePolicy::peft));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSetup {
    #[serde(default)]
    pub config: PretrainConfig,
    /// Unlabelled corpus; defaults to an acted world drawn from
    /// `seed + PRETRAIN_WORLD_OFFSET`.
    #[serde(default)]
    pub corpus: Option<CorpusSpec>,
}

impl Default for PretrainSetup {
    fn default() -> Self {
        PretrainSetup { config: PretrainConfig::default(), corpus: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSetup {
    /// Stage-2 training; defaults to the stage-1 `train` settings.
    #[serde(default)]
    pub stage2: Option<TrainConfig>,
    /// Defaults to five consecutive seeds starting at the experiment seed.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

impl Default for AdaptSetup {
    fn default() -> Self {
        AdaptSetup { stage2: None, seeds: None }
    }
}

/// Which generated corpus `train` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainDomain {
    #[default]
    Acted,
    Natural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub arch: ArchChoice,
    #[serde(default = "toy_hyper")]
    pub hyper: AdapterHyper,
    /// Rows trained by `train`.
    #[serde(default = "table_policies")]
    pub policies: Vec<FreezePolicy>,
    /// Default: `CorpusSpec::acted(seed)`.
    #[serde(default)]
    pub acted: Option<CorpusSpec>,
    /// Default: `CorpusSpec::natural(seed)`.
    #[serde(default)]
    pub natural: Option<CorpusSpec>,
    #[serde(default)]
    pub train_domain: TrainDomain,
    #[serde(default)]
    pub pretrain: PretrainSetup,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub adapt: AdaptSetup,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// A single fold instead of full cross-validation.
    #[serde(default)]
    pub fold: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PeftError::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn acted_spec(&self) -> CorpusSpec {
        self.acted.clone().unwrap_or_else(|| CorpusSpec::acted(self.seed))
    }

    pub fn natural_spec(&self) -> CorpusSpec {
        self.natural.clone().unwrap_or_else(|| CorpusSpec::natural(self.seed))
    }

    pub fn pretrain_spec(&self) -> CorpusSpec {
        self.pretrain.corpus.clone().unwrap_or_else(|| CorpusSpec::acted(self.seed.wrapping_add(PRETRAIN_WORLD_OFFSET)))
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig { seed: self.seed, ..self.pretrain.config.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn plan(&self) -> StagePlan {
        let stage1 = self.train_config();
        StagePlan {
            hyper: self.hyper,
            stage2: self.adapt.stage2.clone().unwrap_or_else(|| stage1.clone()),
            stage1,
            seeds: self.adapt.seeds.clone().unwrap_or_else(|| (0..5).map(|i| self.seed + i).collect()),
        }
    }

    /// Checks everything a run could reject, before any compute.
    pub fn validate(&self) -> Result<()> {
        let arch = self.arch.resolve()?;
        let specs = [self.acted_spec(), self.natural_spec(), self.pretrain_spec()];
        for spec in &specs {
            spec.validate()?;
            if spec.feat_dim != arch.feat_dim {
                return Err(PeftError::config(format!(
                    "corpus feat_dim {} does not match the encoder input {}",
                    spec.feat_dim, arch.feat_dim
                )));
            }
            if spec.max_frames > arch.max_frames {
                return Err(PeftError::config("corpus utterances exceed the encoder's max_frames"));
            }
        }
        self.pretrain_config().validate()?;
        self.train.validate()?;
        let plan = self.plan();
        plan.stage2.validate()?;
        if plan.stage2.task != self.train.task {
            return Err(PeftError::config("stage-2 task must match the training task"));
        }
        if plan.seeds.is_empty() {
            return Err(PeftError::config("adapt.seeds must not be empty"));
        }
        if self.policies.is_empty() {
            return Err(PeftError::config("no policies to train"));
        }
        for p in &self.policies {
            let flags = p.required_adapters();
            if flags.any() {
                crate::adapters::AdapterSet::new(&arch, flags, self.hyper, &mut ChaCha8Rng::seed_from_u64(0))?;
            }
        }
        if let Some(k) = self.fold {
            let sessions = self.acted_spec().sessions.min(self.natural_spec().sessions);
            if k == 0 || k > sessions {
                return Err(PeftError::config(format!("fold {k} outside 1..={sessions}")));
            }
        }
        Ok(())
    }

    pub fn folds(&self, corpus: &Corpus) -> Vec<usize> {
        match self.fold {
            Some(k) => vec![k],
            None => (1..=corpus.session_count()).collect(),
        }
    }

    /// Base encoder pretrained on the unlabelled corpus.
    pub fn base_encoder(&self) -> Result<EncoderParams> {
        let corpus = generate_corpus(&self.pretrain_spec())?;
        pretrain_base(&self.arch.resolve()?, &corpus, &self.pretrain_config())
    }
}

/// Trainable upstream parameters under `policy` (the head is excluded).
pub fn policy_param_count(arch: &ArchShape, hyper: AdapterHyper, policy: &FreezePolicy) -> u64 {
    match policy.mode {
        Mode::Pt => 0,
        Mode::Ft => arch.block_param_count() as u64,
        Mode::Peft => ParamCounts::closed_form(arch, policy.required_adapters(), hyper).total(),
    }
}

/// Row label: `PT`, `FT`, or the adaptor combination.
pub fn policy_label(policy: &FreezePolicy) -> String {
    match policy.mode {
        Mode::Pt | Mode::Ft => policy.mode.to_string(),
        Mode::Peft => policy.required_adapters().label(),
    }
}

#[derive(Debug, Clone)]
pub struct FoldRun {
    pub fold: usize,
    pub model: Model,
    pub history: History,
    pub test: EvalResult,
}

/// Trains one row on one fold from `base`.
pub fn run_fold(
    base: &EncoderParams,
    corpus: &Corpus,
    policy: &FreezePolicy,
    hyper: AdapterHyper,
    cfg: &TrainConfig,
    fold: usize,
) -> Result<FoldRun> {
    let split = split_losso(corpus, fold)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::from_encoder(base.clone(), policy.required_adapters(), hyper, cfg.task, &mut rng)?;
    let out = train(&model, &split.train, &split.val, cfg, policy)?;
    let test = evaluate(&out.model, &split.test)?;
    Ok(FoldRun { fold, model: out.model, history: out.history, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub label: String,
    pub policy: FreezePolicy,
    pub params: u64,
    pub folds: Vec<usize>,
    pub per_fold: Vec<EvalResult>,
    pub mean: EvalResult,
}

/// The comparison table: flags, trainable parameters and scores per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub task: Task,
    pub rows: Vec<ResultRow>,
}

/// Trains every policy on every fold. Runs fan out on the current rayon
/// pool and are gathered in (policy, fold) order. `sink` sees each fold
/// run in that order, e.g. to write checkpoints.
pub fn train_table(
    base: &EncoderParams,
    corpus: &Corpus,
    cfg: &ExperimentConfig,
    mut sink: impl FnMut(&FreezePolicy, &FoldRun) -> Result<()>,
) -> Result<ResultsTable> {
    let train_cfg = cfg.train_config();
    let folds = cfg.folds(corpus);
    let jobs: Vec<(usize, usize)> =
        (0..cfg.policies.len()).flat_map(|p| folds.iter().map(move |&f| (p, f))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(p, f)| run_fold(base, corpus, &cfg.policies[p], cfg.hyper, &train_cfg, f))
        .collect::<Result<Vec<_>>>()?;
    let arch = cfg.arch.resolve()?;
    let mut rows = Vec::new();
    for (p, chunk) in cfg.policies.iter().zip(runs.chunks(folds.len())) {
        for run in chunk {
            sink(p, run)?;
        }
        let per_fold: Vec<EvalResult> = chunk.iter().map(|r| r.test.clone()).collect();
        rows.push(ResultRow {
            label: policy_label(p),
            policy: *p,
            params: policy_param_count(&arch, cfg.hyper, p),
            folds: folds.clone(),
            mean: cv_mean(&per_fold)?,
            per_fold,
        });
    }
    Ok(ResultsTable { task: train_cfg.task, rows })
}

impl ResultsTable {
    fn metric_headers(&self) -> Vec<&'static str> {
        match self.task {
            Task::Classification => vec!["acc"],
            Task::Regression => vec!["ccc_v", "ccc_a", "ccc_d"],
        }
    }

    /// Accuracy in percent with two decimals; CCC with three.
    fn metric_cells(&self, e: &EvalResult) -> Vec<String> {
        let f = |v: Option<f64>, scale: f64, digits: usize| v.map_or("-".to_string(), |x| format!("{:.*}", digits, scale * x));
        match self.task {
            Task::Classification => vec![f(e.acc, 100.0, 2)],
            Task::Regression => vec![f(e.ccc_v, 1.0, 3), f(e.ccc_a, 1.0, 3), f(e.ccc_d, 1.0, 3)],
        }
    }

    /// One line per row with the cross-validation mean. CSV keeps exact
    /// parameter counts.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["row", "ba", "lora", "ws", "wg", "params"];
        header.extend(self.metric_headers());
        let rows = self.rows.iter().map(|r| {
            let mut fields: Vec<String> = vec![r.label.clone()];
            fields.extend(r.policy.flag_cells().map(String::from));
            fields.push(r.params.to_string());
            fields.extend(self.metric_cells(&r.mean));
            fields
        });
        crate::table::csv_string(&header, rows)
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<16}{:<4}{:<6}{:<4}{:<4}{:>10}", "row", "BA", "LoRA", "WS", "WG", "# param");
        for h in self.metric_headers() {
            write!(out, "{h:>10}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            let [ba, lora, ws, wg] = r.policy.flag_cells();
            write!(out, "{:<16}{ba:<4}{lora:<6}{ws:<4}{wg:<4}{:>10}", r.label, render_count(r.params)).unwrap();
            for c in self.metric_cells(&r.mean) {
                write!(out, "{c:>10}").unwrap();
            }
            out.push('\n');
        }
        let folds = self.rows.first().map(|r| r.folds.clone()).unwrap_or_default();
        writeln!(out, "scores: test-set mean over fold(s) {folds:?}").unwrap();
        out
    }
}

/// Two-stage study from the acted corpus (source) to the natural corpus
/// (target) on the configured fold, fold 1 by default.
pub fn adaptation_study(base: &EncoderParams, acted: &Corpus, natural: &Corpus, cfg: &ExperimentConfig) -> Result<AdaptationStudy> {
    let fold = cfg.fold.unwrap_or(1);
    let source = DomainData { name: "acted".into(), split: split_losso(acted, fold)? };
    let target = DomainData { name: "natural".into(), split: split_losso(natural, fold)? };
    run_study(base, &source, &target, &cfg.plan())
}
