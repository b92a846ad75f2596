//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use saved::augment::{self, stream};
use saved::autograd::{Graph, Tensor, Var};
use saved::encoder::{EncoderConfig, ModelParameters};
use saved::loss::{nt_xent_graph, LossConfig};
use saved::tokenizer::TokenSequence;
use saved::trainer::contrastive_gradients;
use saved::table::{CellValue, ColumnKind, Table};

pub const FD_STEP: f64 = 1e-5;

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `sum(build(inputs) * w)` for a fixed random `w`.
pub fn max_grad_error(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor], track: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs
            .iter()
            .map(|x| if track { g.param(x.clone()) } else { g.constant(x.clone()) })
            .collect();
        let y = build(&mut g, &vars);
        let w = g.constant(randn(g.shape(y), 999));
        let yw = g.mul(y, w).unwrap();
        let loss = g.sum(yw);
        (g, vars, loss)
    };
    let (mut g, vars, loss) = eval(inputs, true);
    g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let (gp, _, lp) = eval(&plus, false);
            let (gm, _, lm) = eval(&minus, false);
            let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

/// Every differentiable graph op with inputs away from kinks.
pub fn core_op_cases() -> Vec<(&'static str, Vec<Tensor>, Build)> {
    fn case(
        name: &'static str,
        inputs: Vec<Tensor>,
        f: impl Fn(&mut Graph, &[Var]) -> Var + 'static,
    ) -> (&'static str, Vec<Tensor>, Build) {
        (name, inputs, Box::new(f))
    }
    vec![
        case("matmul", vec![randn(&[3, 4], 1), randn(&[4, 2], 2)], |g, v| g.matmul(v[0], v[1]).unwrap()),
        case("matmul_batched", vec![randn(&[2, 3, 4], 3), randn(&[4, 5], 4)], |g, v| {
            g.matmul(v[0], v[1]).unwrap()
        }),
        case("add_broadcast", vec![randn(&[3, 4], 5), randn(&[4], 6)], |g, v| g.add(v[0], v[1]).unwrap()),
        case("mul", vec![randn(&[3, 4], 7), randn(&[3, 4], 8)], |g, v| g.mul(v[0], v[1]).unwrap()),
        case("relu", vec![randn(&[5, 3], 9)], |g, v| g.relu(v[0])),
        case("exp", vec![randn(&[4, 3], 10)], |g, v| g.exp(v[0])),
        case("log", vec![randn(&[4, 3], 11)], |g, v| {
            let e = g.exp(v[0]);
            g.log(e).unwrap()
        }),
        case("scale_div", vec![randn(&[3, 3], 12)], |g, v| {
            let s = g.scale(v[0], -1.7);
            g.div_scalar(s, 0.7)
        }),
        case("softmax", vec![randn(&[3, 5], 13)], |g, v| g.softmax(v[0]).unwrap()),
        case("log_softmax", vec![randn(&[3, 5], 14)], |g, v| g.log_softmax(v[0]).unwrap()),
        case("layer_norm", vec![randn(&[4, 6], 15), randn(&[6], 16), randn(&[6], 17)], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()
        }),
        case("mean_axis_0", vec![randn(&[4, 3], 18)], |g, v| g.mean_axis(v[0], 0).unwrap()),
        case("mean_axis_1", vec![randn(&[4, 3], 19)], |g, v| g.mean_axis(v[0], 1).unwrap()),
        case("sum_mean", vec![randn(&[4, 3], 20)], |g, v| {
            let s = g.sum(v[0]);
            let m = g.mean(v[0]);
            g.mul(s, m).unwrap()
        }),
        case("transpose", vec![randn(&[3, 4], 21)], |g, v| g.transpose(v[0]).unwrap()),
        case("reshape", vec![randn(&[3, 4], 22)], |g, v| g.reshape(v[0], &[2, 6]).unwrap()),
        case("concat", vec![randn(&[2, 3], 23), randn(&[1, 3], 24)], |g, v| g.concat(&[v[0], v[1]]).unwrap()),
        case("concat_last", vec![randn(&[2, 3], 25), randn(&[2, 2], 26)], |g, v| {
            g.concat_last(&[v[0], v[1]]).unwrap()
        }),
        case("slice_last", vec![randn(&[3, 6], 27)], |g, v| g.slice_last(v[0], 2, 5).unwrap()),
        case("embedding", vec![randn(&[6, 4], 28)], |g, v| g.embedding(v[0], &[3, 0, 3, 5]).unwrap()),
        case("masked_fill", vec![randn(&[2, 3], 29)], |g, v| {
            g.masked_fill(v[0], &[true, false, false, false, true, false], -2.0).unwrap()
        }),
        case("gather_rows", vec![randn(&[3, 4], 30)], |g, v| g.gather_rows(v[0], &[2, 0, 1]).unwrap()),
        case("l2_normalize", vec![randn(&[3, 4], 31)], |g, v| g.l2_normalize(v[0]).unwrap()),
        case("dropout", vec![randn(&[4, 5], 32)], |g, v| g.dropout(v[0], 0.3, true, &mut stream(7))),
        case("nt_xent", vec![randn(&[3, 4], 33), randn(&[3, 4], 34)], |g, v| {
            nt_xent_graph(g, v[0], v[1], &LossConfig::default()).unwrap()
        }),
    ]
}

/// Small encoder used by gradient checks.
pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 40,
        d_model: 8,
        d_emb: 4,
        d_hidden: 6,
        d_ff: 16,
        num_heads: 2,
        num_layers: 1,
        max_len: 16,
        dropout_rate: 0.1,
    }
}

/// Initialized parameters plus Gaussian noise, so biases and LayerNorm
/// affine terms are not at their symmetric starting values.
pub fn perturbed_params(cfg: &EncoderConfig, seed: u64) -> ModelParameters {
    let mut params = ModelParameters::init(cfg, seed).unwrap();
    for (k, t) in params.tensors_mut().iter_mut().enumerate() {
        let noise = randn(t.shape(), seed * 1000 + k as u64);
        for (x, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *x += 0.1 * n;
        }
    }
    params
}

pub fn random_sequences(count: usize, cfg: &EncoderConfig, seed: u64) -> Vec<TokenSequence> {
    let mut rng = stream(seed);
    (0..count)
        .map(|_| {
            let len = rng.random_range(3..=cfg.max_len + 4);
            let raw: Vec<u32> = (0..len).map(|_| rng.random_range(1..60)).collect();
            TokenSequence::from_raw(&raw, cfg.max_len, cfg.vocab_size)
        })
        .collect()
}

/// Finite-difference check of the full encode plus loss pipeline, with
/// dropout active under a fixed mask seed.
pub fn composed_grad_error() -> f64 {
    let cfg = tiny_config();
    let params = perturbed_params(&cfg, 3);
    let vi = random_sequences(3, &cfg, 1);
    let vj = random_sequences(3, &cfg, 2);
    let loss_cfg = LossConfig::default();
    let loss_at = |k: usize, i: usize, delta: f64| {
        let mut p = params.clone();
        p.tensors_mut()[k].data_mut()[i] += delta;
        contrastive_gradients(&p, &vi, &vj, &loss_cfg, true, 11, false).unwrap().0
    };
    let (_, grads) = contrastive_gradients(&params, &vi, &vj, &loss_cfg, true, 11, false).unwrap();
    let mut worst: f64 = 0.0;
    for (k, t) in params.tensors().iter().enumerate() {
        for i in 0..t.numel() {
            let numeric = (loss_at(k, i, FD_STEP) - loss_at(k, i, -FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads[k][i], numeric));
        }
    }
    worst
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direct evaluation of the contrastive loss, one term at a time.
pub fn nt_xent_oracle(z_i: &[Vec<f64>], z_j: &[Vec<f64>], tau: f64) -> f64 {
    let n = z_i.len();
    let r: Vec<Vec<f64>> = z_i.iter().chain(z_j).map(|v| unit(v)).collect();
    let mut total = 0.0;
    for a in 0..2 * n {
        let pos = if a < n { a + n } else { a - n };
        let num = (dot(&r[a], &r[pos]) / tau).exp();
        let den: f64 = (0..2 * n)
            .filter(|&b| b != a)
            .map(|b| (dot(&r[a], &r[b]) / tau).exp())
            .sum();
        total += (num / den).ln();
    }
    -total / (2 * n) as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(&unit(a), &unit(b))
}

/// Mean same-family minus mean cross-family cosine by two explicit passes.
pub fn separation_oracle(rows: &[Vec<f64>], families: &[String]) -> f64 {
    let (mut intra_sum, mut intra_n, mut inter_sum, mut inter_n) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if families[i] == families[j] {
                intra_sum += cosine(&rows[i], &rows[j]);
                intra_n += 1;
            }
        }
    }
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if families[i] != families[j] {
                inter_sum += cosine(&rows[i], &rows[j]);
                inter_n += 1;
            }
        }
    }
    intra_sum / intra_n as f64 - inter_sum / inter_n as f64
}

/// Best threshold by exhaustive search over midpoints between distinct
/// similarity values, mapped to the smallest 0.01 grid point of the winning
/// interval. Similarities must lie strictly between grid points.
///
/// Returns the grid index `k` of `xi = k / 100`.
pub fn threshold_oracle(positives: &[f64], negatives: &[f64]) -> u32 {
    let mut values: Vec<f64> = positives.iter().chain(negatives).copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let mut cuts = vec![values[0] - 1.0];
    cuts.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    cuts.push(values[values.len() - 1] + 1.0);
    let (p, q) = (positives.len() as f64, negatives.len() as f64);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (c, &cut) in cuts.iter().enumerate() {
        let tpr = positives.iter().filter(|&&s| s >= cut).count() as f64 / p;
        let tnr = negatives.iter().filter(|&&s| s < cut).count() as f64 / q;
        let ba = (tpr + tnr) / 2.0;
        if ba > best.0 + 1e-12 {
            best = (ba, c);
        }
    }
    // Winning interval is (values[c-1], values[c]]; pick the first grid
    // point above its lower end.
    match best.1 {
        0 => 1,
        c => (values[c - 1] * 100.0).floor() as u32 + 1,
    }
}

/// Random table with numeric and categorical columns and some missing cells.
pub fn random_table(seed: u64) -> Table {
    let mut rng = stream(seed);
    let rows = rng.random_range(1..=12);
    let num_numeric = rng.random_range(0..=3);
    let num_categorical = rng.random_range(0..=3).max(usize::from(num_numeric == 0));
    let mut columns = Vec::new();
    for c in 0..num_numeric {
        let cells = (0..rows)
            .map(|_| {
                if rng.random_bool(0.1) {
                    CellValue::Missing
                } else {
                    CellValue::number((rng.random_range(-100.0..100.0f64) * 100.0).round() / 100.0)
                }
            })
            .collect();
        columns.push((format!("n{c}"), cells));
    }
    for c in 0..num_categorical {
        let k = rng.random_range(1..=4);
        let cells = (0..rows)
            .map(|_| {
                if rng.random_bool(0.1) {
                    CellValue::Missing
                } else {
                    CellValue::text(format!("v{}", rng.random_range(0..k)))
                }
            })
            .collect();
        columns.push((format!("c{c}"), cells));
    }
    Table::from_columns(format!("t{seed}"), columns, "fam").unwrap()
}

fn row_multiset(t: &Table) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for r in t.rows() {
        *m.entry(format!("{r:?}")).or_insert(0) += 1;
    }
    m
}

fn column_multiset(t: &Table) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for c in t.columns() {
        *m.entry(format!("{c:?}")).or_insert(0) += 1;
    }
    m
}

fn ensure(cond: bool, what: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

/// Indicator columns produced from categorical column `col` of `before`.
fn indicator_sums(after: &Table, before: &Table) -> Vec<Vec<f64>> {
    let kept: Vec<&String> = before.attributes().iter().collect();
    let idx: Vec<usize> = after
        .attributes()
        .iter()
        .enumerate()
        .filter(|(_, a)| !kept.contains(a))
        .map(|(j, _)| j)
        .collect();
    after
        .rows()
        .iter()
        .map(|r| idx.iter().map(|&j| r[j].as_number().unwrap_or(f64::NAN)).collect())
        .collect()
}

/// One randomized trial of every augmentation invariant.
pub fn augmentation_trial(seed: u64) -> Result<(), String> {
    let t = random_table(seed);
    let mut rng = stream(seed ^ 0x5eed);

    let s = augment::apply_row_shuffle(&t, 1.0, &mut rng);
    ensure(row_multiset(&s) == row_multiset(&t), "row shuffle changed the row multiset")?;
    ensure(s.attributes() == t.attributes(), "row shuffle changed the schema")?;
    let s = augment::apply_column_shuffle(&t, 1.0, &mut rng);
    ensure(column_multiset(&s) == column_multiset(&t), "column shuffle changed the columns")?;

    // A single categorical column makes every produced column an indicator.
    let cats: Vec<usize> = (0..t.num_columns())
        .filter(|&j| t.column_kind(j) == ColumnKind::Categorical)
        .collect();
    if let Some(&j) = cats.first() {
        let col = t.columns().swap_remove(j);
        let single = Table::from_columns("one", vec![col], "fam").unwrap();
        let empty = Table::from_columns("none", Vec::new(), "fam").unwrap();
        let oh = augment::apply_one_hot(&single, 1.0, &mut rng);
        for row in indicator_sums(&oh, &empty) {
            ensure(row.iter().sum::<f64>() == 1.0, "one-hot row sum is not 1")?;
        }
        let dm = augment::apply_dummy_encoding(&single, 1.0, &mut rng);
        if dm.attributes() != single.attributes() {
            for row in indicator_sums(&dm, &empty) {
                let s: f64 = row.iter().sum();
                ensure(s == 0.0 || s == 1.0, "dummy row sum not in {0, 1}")?;
            }
        }
    }

    let identity = [
        augment::apply_column_dropout(&t, 0.0, &mut rng),
        augment::apply_dummy_encoding(&t, 0.0, &mut rng),
        augment::apply_row_shuffle(&t, 0.0, &mut rng),
        augment::apply_one_hot(&t, 0.0, &mut rng),
        augment::inject_missing(&t, 0.0, &mut rng),
        augment::apply_jitter(&t, 0.0, &mut rng),
        augment::apply_column_shuffle(&t, 0.0, &mut rng),
        augment::apply_row_drop(&t, 0.0, &mut rng),
    ];
    for (k, out) in identity.iter().enumerate() {
        ensure(*out == t, &format!("operator {} is not the identity at zero", k + 1))?;
    }

    let d = augment::apply_column_dropout(&t, 1.0, &mut rng);
    ensure(d.num_columns() >= 1, "column dropout removed every column")?;
    let r = augment::apply_row_drop(&t, 0.99, &mut rng);
    ensure(r.num_rows() >= 1, "row drop removed every row")?;
    let views = augment::make_views_with(&t, &augment::AugmentationConfig::default(), &mut rng);
    ensure(
        views.augmented.num_rows() >= 1 && views.augmented.num_columns() >= 1,
        "composed view lost every row or column",
    )?;

    let j = augment::apply_jitter(&t, 0.01, &mut rng);
    for (c, kind) in t.column_kinds().into_iter().enumerate() {
        for (a, b) in t.column(c).zip(j.column(c)) {
            let unchanged = a == b;
            match kind {
                ColumnKind::Categorical => ensure(unchanged, "jitter changed a categorical cell")?,
                ColumnKind::Numeric if a.is_missing() => {
                    ensure(unchanged, "jitter changed a missing cell")?
                }
                ColumnKind::Numeric => {}
            }
        }
    }
    Ok(())
}
