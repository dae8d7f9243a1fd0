//! Synthetic emotion corpora with session structure and an acted/natural
//! domain contrast, leave-one-session-out splitting, and JSON-Lines I/O.

mod generate;
mod io;
mod split;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

pub use generate::{generate_corpus, CorpusSpec};
pub use io::{read_corpus, read_corpus_from, write_corpus, write_corpus_to};
pub use split::{split_losso, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Happy,
    Sad,
    Angry,
    Neutral,
}

impl Emotion {
    pub const ALL: [Emotion; 4] = [Emotion::Happy, Emotion::Sad, Emotion::Angry, Emotion::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Angry => "angry",
            Emotion::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Acted,
    Natural,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Acted => "acted",
            Domain::Natural => "natural",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `T × F`
    pub frames: Array2<f64>,
    pub label: Emotion,
    /// Valence, arousal, dominance in `[-1, 1]`.
    pub vad: [f64; 3],
    /// 1-based session id.
    pub session: usize,
    pub domain: Domain,
}

impl Utterance {
    pub fn mean_frame(&self) -> Array1<f64> {
        self.frames.mean_axis(Axis(0)).expect("utterances have at least one frame")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>) -> Self {
        Corpus { utterances }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Utterance> {
        self.utterances.iter()
    }

    /// Highest session id present (sessions are numbered from 1).
    pub fn session_count(&self) -> usize {
        self.utterances.iter().map(|u| u.session).max().unwrap_or(0)
    }

    pub fn feat_dim(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.frames.ncols())
    }

    /// Utterance counts indexed by `[session - 1][class]`.
    pub fn cell_counts(&self) -> Vec<[usize; 4]> {
        let mut counts = vec![[0usize; 4]; self.session_count()];
        for u in &self.utterances {
            counts[u.session - 1][u.label.index()] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<Emotion> {
        self.utterances.iter().map(|u| u.label).collect()
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Utterance;
    type IntoIter = std::slice::Iter<'a, Utterance>;

    fn into_iter(self) -> Self::IntoIter {
        self.utterances.iter()
    }
}
