//! Writes a generated corpus and its embeddings.
//!
//! `cargo run --example write_fixture -- <corpus.jsonl> <embeddings.txt> [per_event] [seed]`

use dtsl::data::write_corpus;
use dtsl::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        return Err("usage: write_fixture <corpus.jsonl> <embeddings.txt> [per_event] [seed]".into());
    }
    let per_event = args.get(2).map_or(Ok(50), |s| s.parse())?;
    let seed = args.get(3).map_or(Ok(2024), |s| s.parse())?;
    let corpus = generate(&SyntheticConfig {
        class_vocab: 20,
        shared_vocab: 30,
        event_vocab: 10,
        class_tokens: 4,
        signal: 2.0,
        ..SyntheticConfig::separable(&["crash", "siege", "shooting", "protest"], per_event, 8, seed)
    });
    write_corpus(&args[0], &corpus.records)?;
    std::fs::write(&args[1], corpus.embeddings.to_text())?;
    println!("{} records, {} words", corpus.records.len(), corpus.embeddings.len());
    Ok(())
}
