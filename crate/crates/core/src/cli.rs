//! `saved` command line: benchgen, tokenizer-train, train, embed, eval.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 I/O failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::benchgen::{generate_benchmark, Benchmark, BenchmarkManifest, MANIFEST_FILE};
use crate::config::{Preset, RunConfig};
use crate::encoder::ModelParameters;
use crate::error::{Error, Result};
use crate::eval::{cosine_matrix, evaluate, select_threshold_in, EmbeddingCorpus, PairScope};
use crate::experiment::embed_tables;
use crate::table::{load_table, Table};
use crate::tokenizer::{linearize, train_tokenizer, TokenizerModel};
use crate::trainer::{stratified_split, stratified_split_ids, train, Featurizer, SplitSpec};

pub const TOKENIZER_FILE: &str = "tokenizer.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SIMILARITY_FILE: &str = "similarity.csv";
pub const SPLIT_FILE: &str = "split.txt";

#[derive(Debug, Parser)]
#[command(name = "saved", version, about = "Contrastive table embeddings for dataset version discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; more than one enables parallel encoding.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Extra configuration override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic benchmark with ground-truth version pairs.
    Benchgen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        families: Option<usize>,
        #[arg(long)]
        versions: Option<usize>,
        #[arg(long)]
        depth_min: Option<usize>,
        #[arg(long)]
        depth_max: Option<usize>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        decoys: Option<usize>,
    },
    /// Train the BPE tokenizer on linearized corpus tables.
    TokenizerTrain {
        #[command(flatten)]
        common: Common,
        /// Benchmark directory or directory of CSV files.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        min_frequency: Option<u64>,
    },
    /// Train the encoder and write a run directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Benchmark directory (tables plus manifest).
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// paper or desk.
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Embed corpus tables with a trained checkpoint.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Score embeddings against a manifest's version pairs.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Decision threshold in (0, 1]; selected on validation pairs when omitted.
        #[arg(long)]
        xi: Option<f64>,
        /// Split file from a run directory; recomputed from --seed when omitted.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Report on test pairs (`test`) or on every pair (`all`).
        #[arg(long, default_value = "test")]
        scope: String,
    },
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 2,
        Error::Csv(c) if c.is_io_error() => 2,
        _ => 1,
    }
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_common(&mut cfg, common)?;
    Ok(cfg)
}

fn apply_common(cfg: &mut RunConfig, common: &Common) -> Result<()> {
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    Ok(())
}

fn out_dir(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("--out is required".into()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn init_threads(cfg: &RunConfig) {
    // A second initialization in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global();
}

/// Tables of a benchmark directory, or of every CSV in a plain directory
/// (file stem as id and family).
pub fn load_corpus(dir: &Path) -> Result<Vec<Table>> {
    if dir.join(MANIFEST_FILE).exists() {
        return Ok(Benchmark::load(dir)?.tables);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            load_table(p, &stem, &stem)
        })
        .collect()
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Benchgen {
            common,
            families,
            versions,
            depth_min,
            depth_max,
            rows,
            decoys,
        } => {
            let mut cfg = run_config(&common)?;
            let b = &mut cfg.bench;
            b.families = families.unwrap_or(b.families);
            b.versions_per_seed = versions.unwrap_or(b.versions_per_seed);
            b.depth_range.0 = depth_min.unwrap_or(b.depth_range.0);
            b.depth_range.1 = depth_max.unwrap_or(b.depth_range.1);
            b.rows = rows.unwrap_or(b.rows);
            b.decoys_per_family = decoys.unwrap_or(b.decoys_per_family);
            cfg.bench.validate()?;
            let out = out_dir(&common)?;
            let bench = generate_benchmark(&cfg.bench)?;
            bench.write(out)?;
            println!(
                "wrote {} tables and {} version pairs to {}",
                bench.tables.len(),
                bench.manifest.version_pairs.len(),
                out.display()
            );
            Ok(())
        }
        Command::TokenizerTrain {
            common,
            corpus,
            vocab_size,
            min_frequency,
        } => {
            let mut cfg = run_config(&common)?;
            cfg.tokenizer.vocab_size = vocab_size.unwrap_or(cfg.tokenizer.vocab_size);
            cfg.tokenizer.min_frequency = min_frequency.unwrap_or(cfg.tokenizer.min_frequency);
            cfg.tokenizer.validate()?;
            let out = out_dir(&common)?;
            let tables = load_corpus(&corpus)?;
            let texts: Vec<String> = tables.iter().map(|t| linearize(t, cfg.linearize)).collect();
            let model = train_tokenizer(&texts, &cfg.tokenizer)?;
            create_dir(out)?;
            model.save(out.join(TOKENIZER_FILE))?;
            println!("vocabulary of {} tokens", model.vocab_len());
            Ok(())
        }
        Command::Train {
            common,
            corpus,
            tokenizer,
            preset,
            max_epochs,
        } => {
            let mut cfg = match (&common.config, preset) {
                (Some(path), Some(p)) => {
                    let mut c = RunConfig::load(path)?;
                    if c.preset != p {
                        return Err(Error::InvalidConfig(format!(
                            "--preset {p} conflicts with config preset {}",
                            c.preset
                        )));
                    }
                    apply_common(&mut c, &common)?;
                    c
                }
                (None, Some(p)) => {
                    let mut c = RunConfig::preset(p);
                    apply_common(&mut c, &common)?;
                    c
                }
                _ => run_config(&common)?,
            };
            if let Some(n) = max_epochs {
                cfg.train.max_epochs = n;
            }
            cfg.validate()?;
            let out = out_dir(&common)?;
            init_threads(&cfg);
            let tables = load_corpus(&corpus)?;
            let features = Featurizer::new(TokenizerModel::load(&tokenizer)?, cfg.linearize);
            let split = stratified_split(&tables, cfg.seed)?;
            let outcome = train(&tables, &split, &features, &cfg.setup())?;
            outcome.write_run_dir(out, &cfg.to_text())?;
            write_file(&out.join(SPLIT_FILE), &split.to_text())?;
            let last = outcome.history.last().expect("at least one epoch");
            println!(
                "trained {} epochs; best epoch {} (val_loss={})",
                last.epoch,
                outcome.best_epoch,
                outcome.history[outcome.best_epoch - 1].val_loss
            );
            Ok(())
        }
        Command::Embed {
            common,
            checkpoint,
            tokenizer,
            corpus,
        } => {
            let params = ModelParameters::load(&checkpoint)?;
            let cfg = match &common.config {
                Some(_) => {
                    let cfg = run_config(&common)?;
                    if &cfg.encoder != params.config() {
                        return Err(Error::Checkpoint(
                            "checkpoint encoder does not match --config".into(),
                        ));
                    }
                    cfg
                }
                None => run_config(&common)?,
            };
            let out = out_dir(&common)?;
            init_threads(&cfg);
            let tables = load_corpus(&corpus)?;
            let features = Featurizer::new(TokenizerModel::load(&tokenizer)?, cfg.linearize);
            let embedded = embed_tables(&params, &tables, &features, cfg.threads > 1)?;
            create_dir(out)?;
            embedded.save_csv(out.join(EMBEDDINGS_FILE))?;
            println!(
                "embedded {} tables into {} dimensions",
                embedded.len(),
                params.config().d_emb
            );
            Ok(())
        }
        Command::Eval {
            common,
            embeddings,
            manifest,
            xi,
            split,
            scope,
        } => {
            let cfg = run_config(&common)?;
            if let Some(x) = xi {
                if !(x > 0.0 && x <= 1.0) {
                    return Err(Error::InvalidConfig(format!("--xi {x} not in (0, 1]")));
                }
            }
            let report_all = match scope.as_str() {
                "test" => false,
                "all" => true,
                other => {
                    return Err(Error::InvalidConfig(format!("--scope `{other}` (test|all)")))
                }
            };
            let out = out_dir(&common)?;
            init_threads(&cfg);
            let corpus = EmbeddingCorpus::load_csv(&embeddings)?;
            let manifest = BenchmarkManifest::load(&manifest)?;
            let truth = &manifest.version_pairs;
            truth.validate(&corpus)?;
            let split = match &split {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    SplitSpec::parse(&text)?
                }
                None => {
                    let members: Vec<(&str, &str)> = corpus
                        .ids()
                        .iter()
                        .zip(corpus.families())
                        .map(|(i, f)| (i.as_str(), f.as_str()))
                        .collect();
                    stratified_split_ids(&members, cfg.seed)?
                }
            };
            let (val_scope, test_scope) = split.scopes(&corpus);
            let xi = match xi {
                Some(x) => x,
                None => select_threshold_in(&cosine_matrix(&corpus)?, truth, &corpus, &val_scope)?,
            };
            let scope = if report_all { PairScope::all() } else { test_scope };
            let report = evaluate(&corpus, truth, xi, &scope)?;
            create_dir(out)?;
            report.save(out.join(REPORT_FILE))?;
            report.theta.save_csv(&corpus, out.join(SIMILARITY_FILE))?;
            println!("{}", report.summary_line());
            Ok(())
        }
    }
}
