use super::{Corpus, Emotion, Utterance};
use crate::error::{PeftError, Result};

/// Fraction of the non-test utterances (per class) held out for validation.
const VAL_FRACTION_DENOM: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

/// Leave-one-session-out split: session `fold` is the test set; from the
/// remaining sessions `floor(n_c / 10)` utterances of each class `c` become
/// validation, spread evenly over that class's utterances in corpus order.
pub fn split_losso(corpus: &Corpus, fold: usize) -> Result<Split> {
    let sessions = corpus.session_count();
    if fold == 0 || fold > sessions {
        return Err(PeftError::input(format!("fold {fold} outside 1..={sessions}")));
    }
    let mut is_val = vec![false; corpus.len()];
    for emotion in Emotion::ALL {
        let pool: Vec<usize> = corpus
            .iter()
            .enumerate()
            .filter(|(_, u)| u.session != fold && u.label == emotion)
            .map(|(i, _)| i)
            .collect();
        let n = pool.len();
        let k = n / VAL_FRACTION_DENOM;
        for (pos, &idx) in pool.iter().enumerate() {
            if (pos + 1) * k / n > pos * k / n {
                is_val[idx] = true;
            }
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (u, v) in corpus.iter().zip(is_val) {
        let dest: &mut Vec<Utterance> = if u.session == fold {
            &mut test
        } else if v {
            &mut val
        } else {
            &mut train
        };
        dest.push(u.clone());
    }
    Ok(Split { train: Corpus::new(train), val: Corpus::new(val), test: Corpus::new(test) })
}
