//! Contrastive training loop.
//!
//! Each epoch shuffles the training tables across families, cuts them into
//! batches, builds an (original, augmented) view pair per table, encodes
//! both views and minimizes NT-Xent with AdamW under a linear warmup and
//! global-norm gradient clipping. Validation loss drives early stopping and
//! best-checkpoint selection.
//!
//! Every sequence of a batch is encoded in its own graph. The loss is then
//! built on a small graph over the stacked embeddings, and its gradient with
//! respect to each embedding row is pushed back through the matching
//! sequence graph. Parameter gradients are summed in a fixed order, so the
//! result does not depend on whether sequences ran in parallel.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::augment::{make_views_with, stream, AugmentationConfig};
use crate::autograd::{Graph, Tensor};
use crate::encoder::{bind, embed_all, forward_sequence, EncoderConfig, ModelParameters};
use crate::error::{Error, Result};
use crate::eval::{cosine_matrix, separation_in, EmbeddingCorpus, PairScope};
use crate::loss::{nt_xent_graph, LossConfig};
use crate::table::Table;
use crate::tokenizer::{linearize, LinearizeMode, TokenSequence, TokenizerModel};

/// Minimum absolute drop in validation loss that counts as improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-4;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_fraction: f64,
    pub clip_max_norm: f64,
    pub patience: usize,
    pub seed: u64,
    /// Encode the sequences of a batch on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2.3e-4,
            weight_decay: 5.7e-5,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 32,
            max_epochs: 100,
            warmup_fraction: 0.10,
            clip_max_norm: 1.0,
            patience: 5,
            seed: 0,
            parallel: false,
        }
    }
}

impl TrainConfig {
    /// Settings for small synthetic corpora trained on one core.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 2e-3,
            batch_size: 4,
            max_epochs: 30,
            patience: 10,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("clip_max_norm", self.clip_max_norm),
        ];
        for (name, x) in positive {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name}={x} must be positive")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay={} must be non-negative",
                self.weight_decay
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name}={b} not in [0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig(format!(
                "warmup_fraction={} not in [0, 1)",
                self.warmup_fraction
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, max_epochs and patience must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Disjoint train/validation/test table ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    /// Pair scopes for validation and test metrics over `corpus`.
    ///
    /// Validation pairs have at least one validation endpoint and no test
    /// endpoint. Test pairs have at least one test endpoint.
    pub fn scopes(&self, corpus: &EmbeddingCorpus) -> (PairScope, PairScope) {
        let idx = |ids: &[String]| -> Vec<usize> {
            ids.iter().filter_map(|id| corpus.index_of(id)).collect()
        };
        let test = idx(&self.test);
        (
            PairScope::anchored(idx(&self.validation), test.clone()),
            PairScope::anchored(test, []),
        )
    }

    /// One `<part> <id>` line per table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, ids) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            for id in ids {
                out.push_str(&format!("{name} {id}\n"));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut split = SplitSpec::default();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (part, id) = line
                .trim()
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("split line {}: `{line}`", n + 1)))?;
            match part {
                "train" => split.train.push(id.to_string()),
                "validation" => split.validation.push(id.to_string()),
                "test" => split.test.push(id.to_string()),
                _ => return Err(Error::Parse(format!("split line {}: unknown part `{part}`", n + 1))),
            }
        }
        Ok(split)
    }
}

/// Sizes `(train, validation, test)` for a family of `k >= 3` tables.
pub fn split_sizes(k: usize) -> (usize, usize, usize) {
    let val = (15 * k).div_ceil(100);
    let test = k.saturating_sub((7 * k).div_ceil(10) + val).max(1);
    (k - val - test, val, test)
}

/// Per-family 70/15/15 split; families are visited in name order and
/// shuffled from one seeded stream.
pub fn stratified_split(corpus: &[Table], seed: u64) -> Result<SplitSpec> {
    let members: Vec<(&str, &str)> = corpus
        .iter()
        .map(|t| (t.name(), t.source_dataset()))
        .collect();
    stratified_split_ids(&members, seed)
}

/// Same as [`stratified_split`] over `(id, family)` pairs.
pub fn stratified_split_ids(members: &[(&str, &str)], seed: u64) -> Result<SplitSpec> {
    let mut families: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (id, family) in members {
        families.entry(family).or_default().push(id.to_string());
    }
    let mut rng = stream(seed);
    let mut split = SplitSpec::default();
    for (family, mut ids) in families {
        if ids.len() < 3 {
            return Err(Error::FamilyTooSmall {
                family: family.to_string(),
                count: ids.len(),
            });
        }
        ids.sort();
        ids.shuffle(&mut rng);
        let (tr, va, _) = split_sizes(ids.len());
        let test = ids.split_off(tr + va);
        let val = ids.split_off(tr);
        split.train.extend(ids);
        split.validation.extend(val);
        split.test.extend(test);
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &[Tensor]) -> Self {
        OptimizerState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay.
pub fn adamw_step(
    params: &mut [Tensor],
    state: &mut OptimizerState,
    grads: &[Vec<f64>],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.numel() != g.len() {
            return Err(Error::Shape("gradient does not match parameter".into()));
        }
        if let Some(x) = g.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {x}")));
        }
    }
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for (k, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            let g = grads[k][i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS) + lr * cfg.weight_decay * *x;
        }
    }
    Ok(())
}

/// Learning rate for update `step` (1-based) out of `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let warmup = (cfg.warmup_fraction * total_steps as f64).ceil() as usize;
    if warmup == 0 || step >= warmup {
        cfg.learning_rate
    } else {
        cfg.learning_rate * step as f64 / warmup as f64
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`;
/// returns the factor applied.
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm <= max_norm || !norm.is_finite() {
        return 1.0;
    }
    let scale = max_norm / norm;
    grads.iter_mut().flatten().for_each(|g| *g *= scale);
    scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Patience-based early stopping on validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = self.best == f64::INFINITY || self.best - val_loss > MIN_IMPROVEMENT;
        if improved {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Turns tables into model inputs.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub tokenizer: TokenizerModel,
    pub mode: LinearizeMode,
}

impl Featurizer {
    pub fn new(tokenizer: TokenizerModel, mode: LinearizeMode) -> Self {
        Featurizer { tokenizer, mode }
    }

    pub fn sequence(&self, table: &Table, cfg: &EncoderConfig) -> TokenSequence {
        self.tokenizer
            .encode(&linearize(table, self.mode), cfg.max_len, cfg.vocab_size)
    }
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(seed), |h, &t| splitmix(h ^ splitmix(t)))
}

/// NT-Xent loss of a batch and its gradient for every parameter tensor.
///
/// `views_i[k]` and `views_j[k]` are the two views of table `k`. Dropout in
/// sequence `s` of the stacked batch draws from a stream seeded by
/// `(dropout_seed, s)`.
pub fn contrastive_gradients(
    params: &ModelParameters,
    views_i: &[TokenSequence],
    views_j: &[TokenSequence],
    loss_cfg: &LossConfig,
    train: bool,
    dropout_seed: u64,
    parallel: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if views_i.len() != views_j.len() || views_i.is_empty() {
        return Err(Error::Shape("view batches must be non-empty and aligned".into()));
    }
    let cfg = params.config();
    let seqs: Vec<&TokenSequence> = views_i.iter().chain(views_j).collect();
    let forward = |(s, seq): (usize, &&TokenSequence)| {
        let mut g = Graph::new();
        let p = bind(&mut g, params);
        let mut rng = stream(derive(dropout_seed, &[s as u64]));
        let z = forward_sequence(&mut g, cfg, &p, seq, train, &mut rng)?;
        Ok((g, p, z))
    };
    let mut graphs: Vec<_> = if parallel {
        seqs.par_iter().enumerate().map(forward).collect::<Result<_>>()?
    } else {
        seqs.iter().enumerate().map(forward).collect::<Result<_>>()?
    };

    let n = views_i.len();
    let d = cfg.d_emb;
    let rows = |range: std::ops::Range<usize>, graphs: &[(Graph, _, _)]| -> Result<Tensor> {
        let data: Vec<f64> = graphs[range]
            .iter()
            .flat_map(|(g, _, z)| g.value(*z).data().to_vec())
            .collect();
        Tensor::new(&[n, d], data)
    };
    let mut lg = Graph::new();
    let zi = lg.param(rows(0..n, &graphs)?);
    let zj = lg.param(rows(n..2 * n, &graphs)?);
    let loss = nt_xent_graph(&mut lg, zi, zj, loss_cfg)?;
    lg.backward(loss)?;
    let loss_value = lg.value(loss).item();
    let dz: Vec<f64> = [zi, zj]
        .iter()
        .flat_map(|&v| {
            lg.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; n * d])
        })
        .collect();

    let backward = |(s, (g, p, z)): (usize, &mut (Graph, crate::encoder::BoundParams, crate::autograd::Var))| {
        g.backward_with(*z, dz[s * d..(s + 1) * d].to_vec())?;
        Ok(p.vars
            .iter()
            .map(|&v| g.grad(v).map(<[f64]>::to_vec))
            .collect::<Vec<_>>())
    };
    let per_seq: Vec<Vec<Option<Vec<f64>>>> = if parallel {
        graphs.par_iter_mut().enumerate().map(backward).collect::<Result<_>>()?
    } else {
        graphs.iter_mut().enumerate().map(backward).collect::<Result<_>>()?
    };

    let mut grads: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
    for seq_grads in &per_seq {
        for (acc, g) in grads.iter_mut().zip(seq_grads) {
            if let Some(g) = g {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
    Ok((loss_value, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// NaN when the validation scope has no intra or no inter pair.
    pub val_separation: f64,
    /// Learning rate of the last update in the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelParameters,
    pub last: ModelParameters,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_separation,lr";

impl TrainOutcome {
    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_separation, r.lr
            ));
        }
        out
    }

    /// Writes `config.txt`, `metrics.csv`, `best.ckpt` and `final.ckpt`.
    pub fn write_run_dir(&self, dir: impl AsRef<Path>, config_snapshot: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [("config.txt", config_snapshot), ("metrics.csv", &self.metrics_csv())] {
            let path = dir.join(name);
            std::fs::File::create(&path)
                .and_then(|mut f| f.write_all(text.as_bytes()))
                .map_err(|e| Error::io(&path, e))?;
        }
        self.best.save(dir.join("best.ckpt"))?;
        self.last.save(dir.join("final.ckpt"))
    }
}

/// Everything `train` needs besides the data.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub augmentation: AugmentationConfig,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.augmentation.validate()?;
        self.encoder.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }
}

fn lookup<'a>(by_id: &HashMap<&str, &'a Table>, ids: &[String]) -> Result<Vec<&'a Table>> {
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::UnknownAttribute(format!("table `{id}` not in corpus")))
        })
        .collect()
}

/// Runs contrastive training and returns the lowest-validation-loss
/// parameters together with the per-epoch history.
///
/// Only tables listed in `split.train` and `split.validation` are read.
pub fn train(
    corpus: &[Table],
    split: &SplitSpec,
    features: &Featurizer,
    setup: &TrainSetup,
) -> Result<TrainOutcome> {
    setup.validate()?;
    let cfg = &setup.train;
    let enc = &setup.encoder;
    if split.train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if split.validation.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let by_id: HashMap<&str, &Table> = corpus.iter().map(|t| (t.name(), t)).collect();
    let train_tables = lookup(&by_id, &split.train)?;
    let val_tables = lookup(&by_id, &split.validation)?;

    let batches_per_epoch = batch_bounds(train_tables.len(), cfg.batch_size).len();
    if batches_per_epoch == 0 {
        return Err(Error::InvalidConfig("train split needs at least 2 tables".into()));
    }
    let total_steps = batches_per_epoch * cfg.max_epochs;

    let mut params = ModelParameters::init(enc, cfg.seed)?;
    let mut opt = OptimizerState::new(params.tensors());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut history = Vec::new();
    let mut step = 0usize;
    let mut stopped_early = false;

    // Validation views are fixed for the whole run.
    let (val_i, val_j) =
        view_sequences(&val_tables, features, setup, derive(cfg.seed, &[u64::MAX, 0]));
    let eval_tables: Vec<&Table> = train_tables.iter().chain(&val_tables).copied().collect();
    let eval_seqs: Vec<TokenSequence> = eval_tables.iter().map(|t| features.sequence(t, enc)).collect();

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_tables.len()).collect();
        order.shuffle(&mut stream(derive(cfg.seed, &[epoch as u64, 0])));
        let mut losses = Vec::new();
        let mut lr = 0.0;
        for (b, (lo, hi)) in batch_bounds(order.len(), cfg.batch_size).into_iter().enumerate() {
            let batch: Vec<&Table> = order[lo..hi].iter().map(|&k| train_tables[k]).collect();
            let view_seed = derive(cfg.seed, &[epoch as u64, 1, b as u64]);
            let (vi, vj) = view_sequences(&batch, features, setup, view_seed);
            let dropout_seed = derive(cfg.seed, &[epoch as u64, 2, b as u64]);
            let (loss, mut grads) = contrastive_gradients(
                &params, &vi, &vj, &setup.loss, true, dropout_seed, cfg.parallel,
            )?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            clip_gradients(&mut grads, cfg.clip_max_norm);
            step += 1;
            lr = lr_schedule(step, total_steps, cfg);
            adamw_step(params.tensors_mut(), &mut opt, &grads, cfg, lr)?;
            losses.push(loss);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let (val_loss, _) =
            contrastive_gradients(&params, &val_i, &val_j, &setup.loss, false, 0, cfg.parallel)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        let val_separation = validation_separation(&params, &eval_tables, &eval_seqs, split, cfg.parallel)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_separation,
            lr,
        });
        log::info!(
            "epoch {epoch}: train_loss={train_loss:.6} val_loss={val_loss:.6} val_sep={val_separation:.4} lr={lr:.3e}"
        );
        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best = params.clone();
        }
        if decision.stop {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        last: params,
        best_epoch: stopper.best_epoch(),
        stopped_early,
        history,
    })
}

/// `[lo, hi)` bounds of consecutive batches; a trailing batch of one table
/// is dropped.
fn batch_bounds(len: usize, batch_size: usize) -> Vec<(usize, usize)> {
    (0..len)
        .step_by(batch_size)
        .map(|lo| (lo, (lo + batch_size).min(len)))
        .filter(|(lo, hi)| hi - lo >= 2)
        .collect()
}

fn view_sequences(
    tables: &[&Table],
    features: &Featurizer,
    setup: &TrainSetup,
    seed: u64,
) -> (Vec<TokenSequence>, Vec<TokenSequence>) {
    tables
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let mut rng = stream(derive(seed, &[k as u64]));
            let views = make_views_with(t, &setup.augmentation, &mut rng);
            (
                features.sequence(&views.original, &setup.encoder),
                features.sequence(&views.augmented, &setup.encoder),
            )
        })
        .unzip()
}

fn validation_separation(
    params: &ModelParameters,
    tables: &[&Table],
    seqs: &[TokenSequence],
    split: &SplitSpec,
    parallel: bool,
) -> Result<f64> {
    let x = embed_all(params, seqs, parallel)?;
    let corpus = EmbeddingCorpus::new(
        tables.iter().map(|t| t.name().to_string()).collect(),
        tables.iter().map(|t| t.source_dataset().to_string()).collect(),
        x,
    )?;
    let (val_scope, _) = split.scopes(&corpus);
    let theta = cosine_matrix(&corpus)?;
    match separation_in(&theta, &corpus, &val_scope) {
        Ok(s) => Ok(s),
        Err(Error::EmptyCategory(_)) => Ok(f64::NAN),
        Err(Error::ZeroNorm { .. }) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}
