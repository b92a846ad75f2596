//! Transformer table encoder.
//!
//! Token ids are embedded, scaled by [`EMBEDDING_SCALE`], offset by
//! sinusoidal positions, and passed through `num_layers` pre-norm blocks
//! (`x + Attn(LN(x))`, then `x + FFN(LN(x))`) followed by a final layer
//! norm. The block outputs are mean-pooled over the non-pad positions and
//! projected by a two-layer head:
//! `Z = W_out · ReLU(W_in · H_pool + b_in) + b_out`.
//!
//! Only the first `true_length` tokens of a sequence are fed to the blocks.
//! This is exactly masking pad positions out of attention keys and out of
//! the pooling average, and it makes embeddings independent of pad length.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::augment::{stream, Stream};
use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::tokenizer::TokenSequence;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Brings embedding rows to unit variance at initialization, on the same
/// footing as the sinusoidal positions.
pub const EMBEDDING_SCALE: f64 = 1.0 / INIT_STD;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub d_emb: usize,
    /// Hidden width of the projection head.
    pub d_hidden: usize,
    /// Inner width of each block's feedforward network.
    pub d_ff: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl EncoderConfig {
    /// Small configuration used for tests and desk-scale training.
    pub fn desk() -> Self {
        EncoderConfig {
            vocab_size: 2000,
            d_model: 64,
            d_emb: 32,
            d_hidden: 128,
            d_ff: 128,
            num_heads: 4,
            num_layers: 2,
            max_len: 256,
            dropout_rate: 0.1,
        }
    }

    /// Full-size configuration (about 12.7M parameters).
    pub fn paper_scale() -> Self {
        EncoderConfig {
            vocab_size: 12_000,
            d_model: 384,
            d_emb: 256,
            d_hidden: 1536,
            d_ff: 768,
            num_heads: 6,
            num_layers: 6,
            max_len: 1028,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("d_emb", self.d_emb),
            ("d_hidden", self.d_hidden),
            ("d_ff", self.d_ff),
            ("num_heads", self.num_heads),
            ("num_layers", self.num_layers),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model={} not divisible by num_heads={}",
                self.d_model, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate={} not in [0,1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `(name, shape)` of every parameter tensor in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, ff) = (self.d_model, self.d_ff);
        let mut out = vec![("embedding".to_string(), vec![self.vocab_size, d])];
        for l in 0..self.num_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            out.extend([
                (p("ln1.gamma"), vec![d]),
                (p("ln1.beta"), vec![d]),
                (p("attn.w_q"), vec![d, d]),
                (p("attn.b_q"), vec![d]),
                (p("attn.w_k"), vec![d, d]),
                (p("attn.b_k"), vec![d]),
                (p("attn.w_v"), vec![d, d]),
                (p("attn.b_v"), vec![d]),
                (p("attn.w_o"), vec![d, d]),
                (p("attn.b_o"), vec![d]),
                (p("ln2.gamma"), vec![d]),
                (p("ln2.beta"), vec![d]),
                (p("ffn.w_1"), vec![d, ff]),
                (p("ffn.b_1"), vec![ff]),
                (p("ffn.w_2"), vec![ff, d]),
                (p("ffn.b_2"), vec![d]),
            ]);
        }
        out.extend([
            ("final_ln.gamma".to_string(), vec![d]),
            ("final_ln.beta".to_string(), vec![d]),
            ("head.w_in".to_string(), vec![d, self.d_hidden]),
            ("head.b_in".to_string(), vec![self.d_hidden]),
            ("head.w_out".to_string(), vec![self.d_hidden, self.d_emb]),
            ("head.b_out".to_string(), vec![self.d_emb]),
        ]);
        out
    }

    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("vocab_size", self.vocab_size.to_string()),
            ("d_model", self.d_model.to_string()),
            ("d_emb", self.d_emb.to_string()),
            ("d_hidden", self.d_hidden.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("max_len", self.max_len.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
        ]
    }

    /// Applies one `key=value` setting; returns false for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || Error::Parse(format!("bad value for {key}: `{value}`"));
        let usize_val = || value.parse::<usize>().map_err(|_| bad());
        match key {
            "vocab_size" => self.vocab_size = usize_val()?,
            "d_model" => self.d_model = usize_val()?,
            "d_emb" => self.d_emb = usize_val()?,
            "d_hidden" => self.d_hidden = usize_val()?,
            "d_ff" => self.d_ff = usize_val()?,
            "num_heads" => self.num_heads = usize_val()?,
            "num_layers" => self.num_layers = usize_val()?,
            "max_len" => self.max_len = usize_val()?,
            "dropout_rate" => self.dropout_rate = value.parse().map_err(|_| bad())?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// All trainable tensors of an encoder, in [`EncoderConfig::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    config: EncoderConfig,
    tensors: Vec<Tensor>,
}

impl ModelParameters {
    /// Truncated-normal weights (std 0.02, cut at 2 std), zero biases and
    /// shifts, unit layer-norm scales.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed);
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with("gamma") {
                    vec![1.0; n]
                } else if shape.len() == 1 {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| truncated_normal(&mut rng) * INIT_STD).collect()
                };
                Tensor::new(&shape, data).expect("layout shapes are consistent")
            })
            .collect();
        Ok(ModelParameters {
            config: config.clone(),
            tensors,
        })
    }

    pub fn from_tensors(config: &EncoderConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len()
            || layout.iter().zip(&tensors).any(|((_, s), t)| t.shape() != s.as_slice())
        {
            return Err(Error::Shape("tensors do not match encoder layout".into()));
        }
        Ok(ModelParameters {
            config: config.clone(),
            tensors,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> Vec<String> {
        self.config.layout().into_iter().map(|(n, _)| n).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names()
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn count_parameters(&self) -> usize {
        count_parameters(&self.tensors)
    }

    /// Writes the checkpoint: a text header of `key=value` lines describing
    /// the config, terminated by an empty line, followed by every parameter as
    /// little-endian `f64` in layout order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "saved-checkpoint v1").map_err(io)?;
        for (k, v) in self.config.to_key_values() {
            writeln!(w, "{k}={v}").map_err(io)?;
        }
        writeln!(w, "num_params={}", self.count_parameters()).map_err(io)?;
        writeln!(w).map_err(io)?;
        for t in &self.tensors {
            for x in t.data() {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = std::io::BufReader::new(file);
        let mut line = String::new();
        let mut read_line = |r: &mut std::io::BufReader<std::fs::File>| -> Result<String> {
            line.clear();
            r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            Ok(line.trim_end_matches('\n').to_string())
        };
        if read_line(&mut r)? != "saved-checkpoint v1" {
            return Err(Error::Checkpoint("missing checkpoint header".into()));
        }
        let mut config = EncoderConfig::desk();
        let mut declared = None;
        loop {
            let l = read_line(&mut r)?;
            if l.is_empty() {
                break;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad header line `{l}`")))?;
            if k == "num_params" {
                declared = Some(
                    v.parse::<usize>()
                        .map_err(|_| Error::Checkpoint(format!("bad num_params `{v}`")))?,
                );
            } else if !config.set(k, v)? {
                return Err(Error::Checkpoint(format!("unknown header key `{k}`")));
            }
        }
        config.validate()?;
        let mut tensors = Vec::new();
        let mut buf = [0u8; 8];
        for (_, shape) in config.layout() {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Checkpoint("truncated parameter payload".into()))?;
                data.push(f64::from_le_bytes(buf));
            }
            tensors.push(Tensor::new(&shape, data)?);
        }
        if r.read(&mut buf).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::Checkpoint("trailing bytes after payload".into()));
        }
        let params = ModelParameters::from_tensors(&config, tensors)?;
        if declared.is_some_and(|n| n != params.count_parameters()) {
            return Err(Error::Checkpoint("num_params does not match config".into()));
        }
        Ok(params)
    }
}

/// Exact number of trainable scalars across `tensors`.
pub fn count_parameters(tensors: &[Tensor]) -> usize {
    tensors.iter().map(Tensor::numel).sum()
}

fn truncated_normal(rng: &mut Stream) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Sinusoidal position table, `[len, d]`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for j in 0..d {
            let i = (j / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * i / d as f64);
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(&[len, d], data).expect("position table shape")
}

/// Parameters registered as trainable leaves of a graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

pub fn bind(g: &mut Graph, params: &ModelParameters) -> BoundParams {
    BoundParams {
        vars: params.tensors.iter().map(|t| g.param(t.clone())).collect(),
    }
}

const PER_LAYER: usize = 16;

/// Forward pass of one sequence, giving a `[1, d_emb]` embedding.
pub fn forward_sequence(
    g: &mut Graph,
    cfg: &EncoderConfig,
    p: &BoundParams,
    seq: &TokenSequence,
    train: bool,
    rng: &mut Stream,
) -> Result<Var> {
    let tokens = seq.tokens();
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let t = tokens.len();
    let d = cfg.d_model;
    let rate = cfg.dropout_rate;

    let emb = g.embedding(p.vars[0], tokens)?;
    let emb = g.scale(emb, EMBEDDING_SCALE);
    let pos = g.constant(sinusoidal_positions(t, d));
    let mut x = g.add(emb, pos)?;
    x = g.dropout(x, rate, train, rng);

    let heads = cfg.num_heads;
    let dh = d / heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    for l in 0..cfg.num_layers {
        let w = &p.vars[1 + l * PER_LAYER..1 + (l + 1) * PER_LAYER];
        let h = g.layer_norm(x, w[0], w[1], LAYER_NORM_EPS)?;
        let q = linear(g, h, w[2], w[3])?;
        let k = linear(g, h, w[4], w[5])?;
        let v = linear(g, h, w[6], w[7])?;
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let (a, b) = (hd * dh, (hd + 1) * dh);
            let qh = g.slice_last(q, a, b)?;
            let kh = g.slice_last(k, a, b)?;
            let vh = g.slice_last(v, a, b)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, inv_sqrt);
            let attn = g.softmax(scores)?;
            outs.push(g.matmul(attn, vh)?);
        }
        let cat = if heads == 1 { outs[0] } else { g.concat_last(&outs)? };
        let o = linear(g, cat, w[8], w[9])?;
        let o = g.dropout(o, rate, train, rng);
        x = g.add(x, o)?;

        let h = g.layer_norm(x, w[10], w[11], LAYER_NORM_EPS)?;
        let f = linear(g, h, w[12], w[13])?;
        let f = g.relu(f);
        let f = g.dropout(f, rate, train, rng);
        let f = linear(g, f, w[14], w[15])?;
        x = g.add(x, f)?;
    }
    let base = 1 + cfg.num_layers * PER_LAYER;
    let x = g.layer_norm(x, p.vars[base], p.vars[base + 1], LAYER_NORM_EPS)?;
    let pooled = g.mean_axis(x, 0)?;
    let pooled = g.reshape(pooled, &[1, d])?;
    let hidden = linear(g, pooled, p.vars[base + 2], p.vars[base + 3])?;
    let hidden = g.relu(hidden);
    linear(g, hidden, p.vars[base + 4], p.vars[base + 5])
}

/// Forward pass of a batch, giving `[B, d_emb]`.
pub fn forward_batch(
    g: &mut Graph,
    cfg: &EncoderConfig,
    p: &BoundParams,
    seqs: &[TokenSequence],
    train: bool,
    rng: &mut Stream,
) -> Result<Var> {
    let rows = seqs
        .iter()
        .map(|s| forward_sequence(g, cfg, p, s, train, rng))
        .collect::<Result<Vec<_>>>()?;
    g.concat(&rows)
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

/// Embedding of a single sequence.
pub fn encode_table(
    params: &ModelParameters,
    seq: &TokenSequence,
    train: bool,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = bind_constants(&mut g, params);
    let z = forward_sequence(&mut g, &params.config, &p, seq, train, rng)?;
    Ok(g.value(z).data().to_vec())
}

/// Eval-mode embeddings of many sequences as a `[B, d_emb]` tensor.
///
/// Sequences are independent in eval mode, so they are encoded in parallel
/// when `parallel` is set; the result does not depend on the thread count.
pub fn embed_all(
    params: &ModelParameters,
    seqs: &[TokenSequence],
    parallel: bool,
) -> Result<Tensor> {
    let one = |s: &TokenSequence| encode_table(params, s, false, &mut stream(0));
    let rows: Vec<Vec<f64>> = if parallel {
        seqs.par_iter().map(one).collect::<Result<_>>()?
    } else {
        seqs.iter().map(one).collect::<Result<_>>()?
    };
    if rows.is_empty() {
        return Ok(Tensor::zeros(&[0, params.config.d_emb]));
    }
    Tensor::from_rows(&rows)
}

/// Parameters as constant leaves, for inference without gradient tracking.
fn bind_constants(g: &mut Graph, params: &ModelParameters) -> BoundParams {
    BoundParams {
        vars: params.tensors.iter().map(|t| g.constant(t.clone())).collect(),
    }
}
