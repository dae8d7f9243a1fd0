//! Accuracy, Pearson correlation, concordance correlation coefficient and
//! cross-validation averaging.
//!
//! Variances and covariances use the population (`1/n`) form. In `ccc`,
//! `a` is the annotation (ground truth) and `p` the prediction:
//!
//! ```text
//! CCC = 2·cov(a, p) / (σ_a² + σ_p² + (μ_a − μ_p)²)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{PeftError, Result};

/// Fraction of positions where `pred` and `truth` agree.
pub fn accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64> {
    if pred.is_empty() || truth.is_empty() {
        return Err(PeftError::input("accuracy of an empty sequence"));
    }
    if pred.len() != truth.len() {
        return Err(PeftError::input(format!("length mismatch: {} vs {}", pred.len(), truth.len())));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Centred sums rather than averages: dividing by `n` only in the mean gap
/// keeps small integer cases exact.
#[derive(Debug, Clone, Copy)]
struct Moments {
    n: f64,
    mean_p: f64,
    mean_a: f64,
    ss_p: f64,
    ss_a: f64,
    sp: f64,
}

fn moments(pred: &[f64], truth: &[f64]) -> Result<Moments> {
    if pred.len() != truth.len() {
        return Err(PeftError::input(format!("length mismatch: {} vs {}", pred.len(), truth.len())));
    }
    if pred.len() < 2 {
        return Err(PeftError::input("correlation needs at least 2 samples"));
    }
    let n = pred.len() as f64;
    let mean_p = pred.iter().sum::<f64>() / n;
    let mean_a = truth.iter().sum::<f64>() / n;
    let (mut ss_p, mut ss_a, mut sp) = (0.0, 0.0, 0.0);
    for (p, a) in pred.iter().zip(truth) {
        let dp = p - mean_p;
        let da = a - mean_a;
        ss_p += dp * dp;
        ss_a += da * da;
        sp += dp * da;
    }
    if ss_p == 0.0 && ss_a == 0.0 {
        return Err(PeftError::UndefinedCorrelation);
    }
    Ok(Moments { n, mean_p, mean_a, ss_p, ss_a, sp })
}

/// Pearson correlation. A constant vector against a varying one gives 0.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    let m = moments(pred, truth)?;
    if m.ss_p == 0.0 || m.ss_a == 0.0 {
        return Ok(0.0);
    }
    Ok((m.sp / (m.ss_p * m.ss_a).sqrt()).clamp(-1.0, 1.0))
}

/// A CCC value plus whether one of the inputs was constant (in which case
/// the value is 0 by convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concordance {
    pub value: f64,
    pub constant_input: bool,
}

pub fn concordance(pred: &[f64], truth: &[f64]) -> Result<Concordance> {
    let m = moments(pred, truth)?;
    let constant_input = m.ss_p == 0.0 || m.ss_a == 0.0;
    let gap = m.mean_a - m.mean_p;
    let value = if constant_input {
        0.0
    } else {
        2.0 * m.sp / (m.ss_a + m.ss_p + m.n * gap * gap)
    };
    Ok(Concordance { value, constant_input })
}

pub fn ccc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    concordance(pred, truth).map(|c| c.value)
}

/// `∂CCC/∂p_i` for every prediction. Zero when the denominator vanishes.
pub(crate) fn ccc_grad(pred: &[f64], truth: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let mean_p = pred.iter().sum::<f64>() / n;
    let mean_a = truth.iter().sum::<f64>() / n;
    let (mut var_p, mut var_a, mut cov) = (0.0, 0.0, 0.0);
    for (p, a) in pred.iter().zip(truth) {
        var_p += (p - mean_p) * (p - mean_p);
        var_a += (a - mean_a) * (a - mean_a);
        cov += (p - mean_p) * (a - mean_a);
    }
    var_p /= n;
    var_a /= n;
    cov /= n;
    let gap = mean_a - mean_p;
    let num = 2.0 * cov;
    let den = var_a + var_p + gap * gap;
    if den == 0.0 {
        return (0.0, vec![0.0; pred.len()]);
    }
    let grads = pred
        .iter()
        .zip(truth)
        .map(|(p, a)| {
            let dnum = 2.0 * (a - mean_a) / n;
            let dden = 2.0 * (p - mean_p) / n - 2.0 * gap / n;
            (dnum * den - num * dden) / (den * den)
        })
        .collect();
    (num / den, grads)
}

/// Scores for one evaluation. Classification fills `acc`; regression fills
/// the three CCC fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalResult {
    pub acc: Option<f64>,
    pub ccc_v: Option<f64>,
    pub ccc_a: Option<f64>,
    pub ccc_d: Option<f64>,
    pub n: usize,
    /// Set when any CCC fell back to 0 because an input was constant.
    #[serde(default)]
    pub degenerate: bool,
}

impl EvalResult {
    pub fn classification(acc: f64, n: usize) -> Self {
        EvalResult { acc: Some(acc), n, ..Default::default() }
    }

    /// Builds a regression result from predicted and true `(v, a, d)` rows.
    pub fn regression(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<Self> {
        let column = |rows: &[[f64; 3]], k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
        let mut out = EvalResult { n: pred.len(), ..Default::default() };
        let mut values = [0.0; 3];
        for (k, slot) in values.iter_mut().enumerate() {
            let c = concordance(&column(pred, k), &column(truth, k))?;
            out.degenerate |= c.constant_input;
            *slot = c.value;
        }
        out.ccc_v = Some(values[0]);
        out.ccc_a = Some(values[1]);
        out.ccc_d = Some(values[2]);
        Ok(out)
    }

    pub fn mean_ccc(&self) -> Option<f64> {
        Some((self.ccc_v? + self.ccc_a? + self.ccc_d?) / 3.0)
    }

    /// The model-selection score: accuracy, or mean CCC for regression.
    pub fn primary(&self) -> f64 {
        self.acc.or_else(|| self.mean_ccc()).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Unweighted mean of each metric across folds; `n` is the total count.
pub fn cv_mean(folds: &[EvalResult]) -> Result<EvalResult> {
    if folds.is_empty() {
        return Err(PeftError::input("no folds to average"));
    }
    let avg = |get: fn(&EvalResult) -> Option<f64>| -> Option<f64> {
        // Running mean: exact when every fold agrees.
        let vals: Option<Vec<f64>> = folds.iter().map(get).collect();
        vals.map(|v| v.iter().enumerate().fold(0.0, |m, (i, x)| m + (x - m) / (i + 1) as f64))
    };
    Ok(EvalResult {
        acc: avg(|r| r.acc),
        ccc_v: avg(|r| r.ccc_v),
        ccc_a: avg(|r| r.ccc_a),
        ccc_d: avg(|r| r.ccc_d),
        n: folds.iter().map(|r| r.n).sum(),
        degenerate: folds.iter().any(|r| r.degenerate),
    })
}
