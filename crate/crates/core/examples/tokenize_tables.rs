//! Linearizes tables, trains a byte-pair tokenizer on them and encodes one
//! table into a fixed-length id sequence.
//!
//! cargo run --example tokenize_tables

use saved::benchgen::{generate_benchmark, BenchConfig};
use saved::tokenizer::{linearize, train_tokenizer, LinearizeMode, TokenSequence, TokenizerSettings};

fn main() -> saved::Result<()> {
    let bench = generate_benchmark(&BenchConfig {
        families: 2,
        versions_per_seed: 2,
        ..BenchConfig::default()
    })?;
    let table = &bench.tables[0];
    let flat = linearize(table, LinearizeMode::Flat);
    println!("flat:      {}...", &flat[..flat.len().min(100)]);
    let bracketed = linearize(table, LinearizeMode::Bracketed);
    println!("bracketed: {}...", &bracketed[..bracketed.len().min(100)]);

    let corpus: Vec<String> = bench.tables.iter().map(|t| linearize(t, LinearizeMode::Flat)).collect();
    let tokenizer = train_tokenizer(
        &corpus,
        &TokenizerSettings {
            vocab_size: 300,
            ..TokenizerSettings::default()
        },
    )?;
    println!("vocabulary {} tokens, {} merges", tokenizer.vocab_len(), tokenizer.merges().len());

    let seq = tokenizer.encode(&flat, 32, 300);
    let pieces: Vec<&str> = seq.tokens().iter().filter_map(|&id| tokenizer.token(id)).collect();
    println!("first tokens {pieces:?}");
    println!("ids {:?} (true length {})", seq.ids(), seq.true_length());

    // Ids beyond the model vocabulary wrap around.
    let wrapped = TokenSequence::from_raw(&[5021, 7422, 3195], 5, 5000);
    println!("5021 7422 3195 at v=5000 -> {:?}", wrapped.ids());
    Ok(())
}
