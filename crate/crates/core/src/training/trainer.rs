use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, LinearSchedule};
use super::policy::{build_mask, FreezePolicy};
use crate::data::{Corpus, Emotion, Utterance};
use crate::encoder::{Model, Task};
use crate::error::{PeftError, Result};
use crate::metrics::{self, EvalResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionLoss {
    /// `1 − mean(CCC_v, CCC_a, CCC_d)` over the minibatch.
    #[default]
    Ccc,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Initial learning rate; `None` picks the policy default
    /// (5e-4, or 5e-5 for full finetuning).
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub regression_loss: RegressionLoss,
}

fn default_task() -> Task {
    Task::Classification
}

fn default_epochs() -> usize {
    20
}

fn default_batch() -> usize {
    32
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: default_task(),
            epochs: default_epochs(),
            lr: None,
            batch_size: default_batch(),
            seed: 0,
            regression_loss: RegressionLoss::Ccc,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(lr) = self.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(PeftError::config(format!("learning rate must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(PeftError::config("batch size must be positive"));
        }
        Ok(())
    }

    pub fn learning_rate(&self, policy: &FreezePolicy) -> f64 {
        self.lr.unwrap_or_else(|| policy.default_lr())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    /// Accuracy, or mean CCC for regression.
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Full-set training loss before any update.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; 0 when no epoch ran.
    pub best_epoch: usize,
    pub steps: usize,
}

impl History {
    pub fn best_val(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).map(|e| e.val_metric)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
}

/// Loss and its gradient with respect to every head output in a batch.
pub(crate) fn batch_loss(
    task: Task,
    kind: RegressionLoss,
    outputs: &[Array1<f64>],
    batch: &[&Utterance],
) -> (f64, Vec<Array1<f64>>) {
    let b = outputs.len() as f64;
    match task {
        Task::Classification => {
            let mut loss = 0.0;
            let grads = outputs
                .iter()
                .zip(batch)
                .map(|(logits, u)| {
                    let probs = crate::ops::softmax(logits.view());
                    let y = u.label.index();
                    loss -= probs[y].max(f64::MIN_POSITIVE).ln();
                    let mut g = probs;
                    g[y] -= 1.0;
                    g / b
                })
                .collect();
            (loss / b, grads)
        }
        Task::Regression => match kind {
            RegressionLoss::Ccc => {
                let mut grads = vec![Array1::zeros(3); outputs.len()];
                let mut mean_ccc = 0.0;
                for k in 0..3 {
                    let pred: Vec<f64> = outputs.iter().map(|o| o[k]).collect();
                    let truth: Vec<f64> = batch.iter().map(|u| u.vad[k]).collect();
                    let (c, g) = metrics::ccc_grad(&pred, &truth);
                    mean_ccc += c / 3.0;
                    for (out, gi) in grads.iter_mut().zip(g) {
                        out[k] = -gi / 3.0;
                    }
                }
                (1.0 - mean_ccc, grads)
            }
            RegressionLoss::Mse => {
                let mut loss = 0.0;
                let grads = outputs
                    .iter()
                    .zip(batch)
                    .map(|(o, u)| {
                        let target = ArrayView1::from(&u.vad[..]);
                        let diff = o - &target;
                        loss += diff.dot(&diff) / 3.0;
                        diff * (2.0 / (3.0 * b))
                    })
                    .collect();
                (loss / b, grads)
            }
        },
    }
}

pub fn predict_labels(model: &Model, corpus: &Corpus) -> Result<Vec<Emotion>> {
    corpus
        .iter()
        .map(|u| {
            let logits = model.predict(u.frames.view())?;
            let best = logits
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            Ok(Emotion::from_index(best.0).expect("four logits"))
        })
        .collect()
}

/// Scores `model` on `corpus`: accuracy for classification, per-attribute
/// CCC for regression.
pub fn evaluate(model: &Model, corpus: &Corpus) -> Result<EvalResult> {
    if corpus.is_empty() {
        return Err(PeftError::input("cannot evaluate on an empty corpus"));
    }
    match model.task() {
        Task::Classification => {
            let pred = predict_labels(model, corpus)?;
            let acc = metrics::accuracy(&pred, &corpus.labels())?;
            Ok(EvalResult::classification(acc, corpus.len()))
        }
        Task::Regression => {
            let pred = corpus
                .iter()
                .map(|u| {
                    let o = model.predict(u.frames.view())?;
                    Ok([o[0], o[1], o[2]])
                })
                .collect::<Result<Vec<_>>>()?;
            let truth: Vec<[f64; 3]> = corpus.iter().map(|u| u.vad).collect();
            EvalResult::regression(&pred, &truth)
        }
    }
}

/// Loss of `model` over the whole corpus as one batch.
pub fn dataset_loss(model: &Model, corpus: &Corpus, kind: RegressionLoss) -> Result<f64> {
    let batch: Vec<&Utterance> = corpus.iter().collect();
    let outputs = batch.iter().map(|u| model.predict(u.frames.view())).collect::<Result<Vec<_>>>()?;
    Ok(batch_loss(model.task(), kind, &outputs, &batch).0)
}

fn minibatches(n: usize, batch_size: usize, epoch_seed: (u64, u64), task: Task) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed.0);
    rng.set_stream(epoch_seed.1);
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    // Batch CCC is undefined for a single sample.
    if task == Task::Regression && batches.len() > 1 && batches.last().map_or(false, |b| b.len() == 1) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

/// Minibatch Adam with linear decay; returns the best-on-validation
/// parameters (earliest epoch on ties) and the metric history.
pub fn train(model: &Model, train: &Corpus, val: &Corpus, cfg: &TrainConfig, policy: &FreezePolicy) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(PeftError::input("training and validation splits must be nonempty"));
    }
    if cfg.task != model.task() {
        return Err(PeftError::config(format!(
            "config task {:?} does not match the model head {:?}",
            cfg.task,
            model.task()
        )));
    }
    if cfg.task == Task::Regression && train.len() < 2 {
        return Err(PeftError::input("regression training needs at least 2 utterances"));
    }
    let mask = build_mask(policy, model)?;
    let trainable = mask.flags_for(model);
    let request = mask.grad_request();

    let per_epoch = minibatches(train.len(), cfg.batch_size, (cfg.seed, 0), cfg.task).len();
    let total_steps = per_epoch * cfg.epochs;
    let schedule = LinearSchedule::new(cfg.learning_rate(policy), total_steps);

    let mut current = model.clone();
    let mut grads = model.zeros_like();
    let mut adam = Adam::default();
    let mut history = History {
        initial_train_loss: dataset_loss(model, train, cfg.regression_loss)?,
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        steps: 0,
    };
    let mut best: Option<(f64, Model)> = None;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let batches = minibatches(train.len(), cfg.batch_size, (cfg.seed, epoch as u64), cfg.task);
        let n_batches = batches.len();
        for indices in batches {
            let batch: Vec<&Utterance> = indices.iter().map(|&i| &train.utterances[i]).collect();
            let passes = batch.iter().map(|u| current.forward(u.frames.view())).collect::<Result<Vec<_>>>()?;
            let outputs: Vec<Array1<f64>> = passes.iter().map(|p| p.output().clone()).collect();
            let (loss, douts) = batch_loss(cfg.task, cfg.regression_loss, &outputs, &batch);
            if !loss.is_finite() {
                return Err(PeftError::Divergence { epoch, step, loss });
            }
            loss_sum += loss;
            for mut b in grads.blocks_mut() {
                b.data.fill(0.0);
            }
            for (pass, dout) in passes.iter().zip(&douts) {
                current.backward(pass, dout.view(), &request, &mut grads);
            }
            adam.step(current.blocks_mut(), grads.blocks(), &trainable, schedule.lr_at(step));
            step += 1;
        }
        let val_metric = evaluate(&current, val)?.primary();
        history.epochs.push(EpochRecord { epoch, train_loss: loss_sum / n_batches as f64, val_metric });
        if best.as_ref().map_or(true, |(v, _)| val_metric > *v) {
            best = Some((val_metric, current.clone()));
            history.best_epoch = epoch;
        }
    }
    history.steps = step;
    let model = best.map_or(current, |(_, m)| m);
    Ok(TrainOutcome { model, history })
}
