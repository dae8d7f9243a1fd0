use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Corpus, Domain, Emotion, Utterance};
use crate::error::{PeftError, Result};

/// One JSON-Lines record. Field order is part of the format.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    label: Emotion,
    vad: [f64; 3],
    session: usize,
    domain: Domain,
    frames: Vec<Vec<f64>>,
}

impl From<&Utterance> for Record {
    fn from(u: &Utterance) -> Self {
        Record {
            id: u.id.clone(),
            label: u.label,
            vad: u.vad,
            session: u.session,
            domain: u.domain,
            frames: u.frames.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl Record {
    fn into_utterance(self) -> std::result::Result<Utterance, String> {
        let t = self.frames.len();
        if t == 0 {
            return Err("utterance has no frames".into());
        }
        let f = self.frames[0].len();
        if self.frames.iter().any(|r| r.len() != f) {
            return Err("frames are not rectangular".into());
        }
        if self.session == 0 {
            return Err("session ids start at 1".into());
        }
        let flat: Vec<f64> = self.frames.into_iter().flatten().collect();
        let frames = Array2::from_shape_vec((t, f), flat).map_err(|e| e.to_string())?;
        Ok(Utterance {
            id: self.id,
            frames,
            label: self.label,
            vad: self.vad,
            session: self.session,
            domain: self.domain,
        })
    }
}

/// Writes one utterance per line. Floats use the shortest representation
/// that parses back to the same bits.
pub fn write_corpus_to<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for u in corpus {
        serde_json::to_writer(&mut out, &Record::from(u))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    write_corpus_to(corpus, BufWriter::new(File::create(path)?))
}

pub fn read_corpus_from<R: BufRead>(input: R) -> Result<Corpus> {
    let mut utterances = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let parse = |message: String| PeftError::Parse { line: i + 1, message };
        let record: Record = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        utterances.push(record.into_utterance().map_err(parse)?);
    }
    Ok(Corpus::new(utterances))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    read_corpus_from(BufReader::new(File::open(path)?))
}
