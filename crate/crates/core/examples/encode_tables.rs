//! Builds the desk-scale encoder, reports its size and embeds a few tables
//! with random initial weights.
//!
//! cargo run --release --example encode_tables

use saved::benchgen::{generate_benchmark, BenchConfig};
use saved::encoder::{EncoderConfig, ModelParameters};
use saved::eval::cosine_matrix;
use saved::experiment::embed_tables;
use saved::tokenizer::{linearize, train_tokenizer, TokenizerSettings};
use saved::trainer::Featurizer;

fn main() -> saved::Result<()> {
    let cfg = EncoderConfig::desk();
    let params = ModelParameters::init(&cfg, 0)?;
    println!("desk encoder: {} parameters in {} tensors", params.count_parameters(), params.tensors().len());
    let paper: usize = EncoderConfig::paper_scale()
        .layout()
        .iter()
        .map(|(_, shape)| shape.iter().product::<usize>())
        .sum();
    println!("paper-scale encoder: {paper} parameters");

    let bench = generate_benchmark(&BenchConfig {
        families: 2,
        versions_per_seed: 2,
        ..BenchConfig::default()
    })?;
    let texts: Vec<String> = bench.tables.iter().map(|t| linearize(t, Default::default())).collect();
    let settings = TokenizerSettings {
        vocab_size: cfg.vocab_size,
        ..TokenizerSettings::default()
    };
    let features = Featurizer::new(train_tokenizer(&texts, &settings)?, Default::default());
    let corpus = embed_tables(&params, &bench.tables, &features, false)?;
    let theta = cosine_matrix(&corpus)?;
    print!("{:>12}", "");
    for id in corpus.ids() {
        print!("{id:>12}");
    }
    println!();
    for (i, id) in corpus.ids().iter().enumerate() {
        print!("{id:>12}");
        for &s in theta.row(i) {
            print!("{s:>12.3}");
        }
        println!();
    }
    Ok(())
}
