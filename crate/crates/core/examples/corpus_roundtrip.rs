//! Generates acted and natural corpora, writes them as JSON Lines, reads
//! them back, and splits by held-out session.
//!
//! cargo run --example corpus_roundtrip

use peftlab::cli::count_summary;
use peftlab::data::{generate_corpus, read_corpus, split_losso, write_corpus, CorpusSpec};

fn main() -> peftlab::Result<()> {
    let acted = generate_corpus(&CorpusSpec::acted(3))?;
    let natural = generate_corpus(&CorpusSpec::natural(3))?;
    let (text, _) = count_summary(&[("acted", &acted), ("natural", &natural)]);
    print!("{text}");

    let dir = std::env::temp_dir().join("peftlab-corpus-roundtrip");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("acted.jsonl");
    write_corpus(&path, &acted)?;
    let back = read_corpus(&path)?;
    println!("round trip of {} utterances is exact: {}", back.len(), back == acted);

    for fold in 1..=acted.session_count() {
        let s = split_losso(&acted, fold)?;
        println!("fold {fold}: train {} val {} test {}", s.train.len(), s.val.len(), s.test.len());
    }
    Ok(())
}
