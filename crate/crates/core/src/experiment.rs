//! End-to-end runs on a corpus with known version pairs.
//!
//! The corpus is split per family, a tokenizer is trained on the training
//! tables, the encoder is trained, and every table is embedded. The
//! threshold is selected on validation pairs and applied to test pairs.
//! The same protocol is applied to the randomly initialized encoder as a
//! baseline.

use crate::augment::AugmentationConfig;
use crate::benchgen::{generate_benchmark, BenchConfig};
use crate::encoder::{embed_all, EncoderConfig, ModelParameters};
use crate::error::Result;
use crate::eval::{
    cosine_matrix, evaluate, select_threshold_in, EmbeddingCorpus, GroundTruth, SimilarityReport,
};
use crate::table::Table;
use crate::tokenizer::{linearize, train_tokenizer, TokenizerSettings};
use crate::loss::LossConfig;
use crate::trainer::{
    stratified_split, train, Featurizer, SplitSpec, TrainConfig, TrainOutcome, TrainSetup,
};

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub split: SplitSpec,
    pub outcome: TrainOutcome,
    /// Threshold selected on validation pairs of the trained model.
    pub xi: f64,
    pub trained: SimilarityReport,
    pub baseline_xi: f64,
    pub baseline: SimilarityReport,
}

/// Embeds `tables` with `params` into an evaluation corpus.
pub fn embed_tables(
    params: &ModelParameters,
    tables: &[Table],
    features: &Featurizer,
    parallel: bool,
) -> Result<EmbeddingCorpus> {
    let seqs: Vec<_> = tables
        .iter()
        .map(|t| features.sequence(t, params.config()))
        .collect();
    let x = embed_all(params, &seqs, parallel)?;
    EmbeddingCorpus::new(
        tables.iter().map(|t| t.name().to_string()).collect(),
        tables.iter().map(|t| t.source_dataset().to_string()).collect(),
        x,
    )
}

/// Selects the threshold on validation pairs and reports on test pairs.
pub fn test_report(
    corpus: &EmbeddingCorpus,
    truth: &GroundTruth,
    split: &SplitSpec,
) -> Result<(f64, SimilarityReport)> {
    let (val_scope, test_scope) = split.scopes(corpus);
    let xi = select_threshold_in(&cosine_matrix(corpus)?, truth, corpus, &val_scope)?;
    Ok((xi, evaluate(corpus, truth, xi, &test_scope)?))
}

pub fn run_experiment(
    tables: &[Table],
    truth: &GroundTruth,
    tokenizer: &TokenizerSettings,
    setup: &TrainSetup,
) -> Result<ExperimentReport> {
    setup.validate()?;
    let split = stratified_split(tables, setup.train.seed)?;
    let texts: Vec<String> = tables
        .iter()
        .filter(|t| split.train.iter().any(|id| id == t.name()))
        .map(|t| linearize(t, Default::default()))
        .collect();
    let features = Featurizer::new(train_tokenizer(&texts, tokenizer)?, Default::default());

    let outcome = train(tables, &split, &features, setup)?;
    let parallel = setup.train.parallel;
    let corpus = embed_tables(&outcome.best, tables, &features, parallel)?;
    let (xi, trained) = test_report(&corpus, truth, &split)?;

    let init = ModelParameters::init(&setup.encoder, setup.train.seed)?;
    let corpus = embed_tables(&init, tables, &features, parallel)?;
    let (baseline_xi, baseline) = test_report(&corpus, truth, &split)?;
    Ok(ExperimentReport {
        split,
        outcome,
        xi,
        trained,
        baseline_xi,
        baseline,
    })
}

/// Benchmark, tokenizer and training settings of the reference desk run.
pub fn reference_config(seed: u64) -> (BenchConfig, TokenizerSettings, TrainSetup) {
    let encoder = EncoderConfig::desk();
    let tokenizer = TokenizerSettings {
        vocab_size: encoder.vocab_size,
        ..TokenizerSettings::default()
    };
    let setup = TrainSetup {
        augmentation: AugmentationConfig {
            seed,
            ..AugmentationConfig::default()
        },
        encoder,
        loss: LossConfig::default(),
        train: TrainConfig {
            seed,
            ..TrainConfig::desk()
        },
    };
    let bench = BenchConfig {
        seed,
        ..BenchConfig::default()
    };
    (bench, tokenizer, setup)
}

/// Generates the reference benchmark for `seed` and runs the full protocol
/// on it with desk settings.
pub fn run_reference(seed: u64) -> Result<ExperimentReport> {
    let (bench, tokenizer, setup) = reference_config(seed);
    let bench = generate_benchmark(&bench)?;
    run_experiment(&bench.tables, &bench.manifest.version_pairs, &tokenizer, &setup)
}
