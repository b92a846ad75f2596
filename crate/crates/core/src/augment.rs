//! Semantics-preserving table augmentations and the two-view generator.
//!
//! Each operator takes an explicit random stream so that a fixed seed always
//! reproduces the same output. [`make_views`] composes the operators in the
//! fixed order column dropout, dummy encoding, one-hot encoding, missing
//! injection, jitter, column shuffle, row drop, row shuffle.
//!
//! Gaussian noise is drawn with the ziggurat sampler of `rand_distr`
//! (`StandardNormal`) on a ChaCha8 stream.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::table::{CellValue, ColumnKind, Table};

/// Random stream used by every stochastic component of the crate.
pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Upper bound on the jitter standard deviation used for training views.
pub const MAX_TRAIN_JITTER: f64 = 0.01;

/// Fraction of rows removed by the row-drop operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowDropFrac {
    Fixed(f64),
    /// Drawn once per view, uniformly from `[lo, hi]`.
    Uniform(f64, f64),
}

impl fmt::Display for RowDropFrac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowDropFrac::Fixed(x) => write!(f, "{x}"),
            RowDropFrac::Uniform(lo, hi) => write!(f, "uniform:{lo}:{hi}"),
        }
    }
}

impl FromStr for RowDropFrac {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("invalid row drop fraction `{s}`"));
        if let Some(rest) = s.strip_prefix("uniform:") {
            let (lo, hi) = rest.split_once(':').ok_or_else(bad)?;
            Ok(RowDropFrac::Uniform(
                lo.parse().map_err(|_| bad())?,
                hi.parse().map_err(|_| bad())?,
            ))
        } else {
            Ok(RowDropFrac::Fixed(s.parse().map_err(|_| bad())?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationConfig {
    pub p_col_dropout: f64,
    pub p_dummy: f64,
    pub p_row_shuffle: f64,
    pub p_onehot: f64,
    /// Per-cell probability of replacing a value with a missing marker.
    pub p_missing: f64,
    pub jitter_std: f64,
    pub p_col_shuffle: f64,
    pub row_drop_frac: RowDropFrac,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            p_col_dropout: 0.1,
            p_dummy: 0.2,
            p_row_shuffle: 0.5,
            p_onehot: 0.2,
            p_missing: 0.02,
            jitter_std: 0.01,
            p_col_shuffle: 0.5,
            row_drop_frac: RowDropFrac::Uniform(0.05, 0.30),
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// A configuration under which the augmented view equals the original.
    pub fn identity() -> Self {
        AugmentationConfig {
            p_col_dropout: 0.0,
            p_dummy: 0.0,
            p_row_shuffle: 0.0,
            p_onehot: 0.0,
            p_missing: 0.0,
            jitter_std: 0.0,
            p_col_shuffle: 0.0,
            row_drop_frac: RowDropFrac::Fixed(0.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_col_dropout", self.p_col_dropout),
            ("p_dummy", self.p_dummy),
            ("p_row_shuffle", self.p_row_shuffle),
            ("p_onehot", self.p_onehot),
            ("p_missing", self.p_missing),
            ("p_col_shuffle", self.p_col_shuffle),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name}={p} not in [0,1]")));
            }
        }
        if !(0.0..=MAX_TRAIN_JITTER).contains(&self.jitter_std) {
            return Err(Error::InvalidConfig(format!(
                "jitter_std={} not in [0,{MAX_TRAIN_JITTER}]",
                self.jitter_std
            )));
        }
        let frac_ok = |x: f64| (0.0..1.0).contains(&x);
        match self.row_drop_frac {
            RowDropFrac::Fixed(x) if !frac_ok(x) => Err(Error::InvalidConfig(format!(
                "row_drop_frac={x} not in [0,1)"
            ))),
            RowDropFrac::Uniform(lo, hi) if !(frac_ok(lo) && frac_ok(hi) && lo <= hi) => Err(
                Error::InvalidConfig(format!("row_drop_frac range [{lo},{hi}] invalid")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub original: Table,
    pub augmented: Table,
    /// Row-drop fraction realized for the augmented view.
    pub row_drop_frac: f64,
}

/// Drops each column with probability `p`, always keeping at least one.
pub fn apply_column_dropout<R: Rng + ?Sized>(table: &Table, p: f64, rng: &mut R) -> Table {
    let n = table.num_columns();
    if n == 0 {
        return table.clone();
    }
    let mut keep: Vec<usize> = (0..n).filter(|_| !rng.random_bool(p)).collect();
    if keep.is_empty() {
        keep.push(rng.random_range(0..n));
    }
    if keep.len() == n {
        return table.clone();
    }
    select_columns(table, &keep)
}

/// Replaces selected categorical columns by `k - 1` indicator columns.
pub fn apply_dummy_encoding<R: Rng + ?Sized>(table: &Table, p: f64, rng: &mut R) -> Table {
    encode_indicators(table, p, rng, true)
}

/// Replaces selected categorical columns by `k` indicator columns.
pub fn apply_one_hot<R: Rng + ?Sized>(table: &Table, p: f64, rng: &mut R) -> Table {
    encode_indicators(table, p, rng, false)
}

pub fn apply_row_shuffle<R: Rng + ?Sized>(table: &Table, p: f64, rng: &mut R) -> Table {
    if !rng.random_bool(p) {
        return table.clone();
    }
    let mut rows = table.rows().to_vec();
    rows.shuffle(rng);
    table.with_rows(rows)
}

pub fn apply_column_shuffle<R: Rng + ?Sized>(table: &Table, p: f64, rng: &mut R) -> Table {
    if !rng.random_bool(p) {
        return table.clone();
    }
    let mut order: Vec<usize> = (0..table.num_columns()).collect();
    order.shuffle(rng);
    select_columns(table, &order)
}

/// Removes `floor(frac * m)` rows uniformly without replacement, keeping at least one.
pub fn apply_row_drop<R: Rng + ?Sized>(table: &Table, frac: f64, rng: &mut R) -> Table {
    let m = table.num_rows();
    let k = ((frac * m as f64).floor() as usize).min(m.saturating_sub(1));
    if k == 0 {
        return table.clone();
    }
    let dropped: HashSet<usize> = rand::seq::index::sample(rng, m, k).into_iter().collect();
    let rows = table
        .rows()
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, r)| r.clone())
        .collect();
    table.with_rows(rows)
}

/// Replaces every cell independently with `Missing` at probability `p`.
pub fn inject_missing<R: Rng + ?Sized>(table: &Table, p: f64, rng: &mut R) -> Table {
    if p == 0.0 {
        return table.clone();
    }
    let rows = table
        .rows()
        .iter()
        .map(|row| {
            row.iter()
                .map(|c| {
                    if rng.random_bool(p) {
                        CellValue::Missing
                    } else {
                        c.clone()
                    }
                })
                .collect()
        })
        .collect();
    table.with_rows(rows)
}

/// Adds `N(0, std^2)` noise to every non-missing cell of every numeric column.
pub fn apply_jitter<R: Rng + ?Sized>(table: &Table, std: f64, rng: &mut R) -> Table {
    if std == 0.0 {
        return table.clone();
    }
    let numeric: Vec<bool> = table
        .column_kinds()
        .into_iter()
        .map(|k| k == ColumnKind::Numeric)
        .collect();
    let rows = table
        .rows()
        .iter()
        .map(|row| {
            row.iter()
                .zip(&numeric)
                .map(|(c, &is_num)| match c.as_number() {
                    Some(x) if is_num => {
                        let z: f64 = rng.sample(StandardNormal);
                        CellValue::Number(x + std * z)
                    }
                    _ => c.clone(),
                })
                .collect()
        })
        .collect();
    table.with_rows(rows)
}

/// Produces the original view and an augmented view driven by `cfg.seed`.
pub fn make_views(table: &Table, cfg: &AugmentationConfig) -> ViewPair {
    let mut rng = stream(cfg.seed);
    make_views_with(table, cfg, &mut rng)
}

/// Same as [`make_views`] but draws from a caller-provided stream.
pub fn make_views_with<R: Rng + ?Sized>(
    table: &Table,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> ViewPair {
    let row_drop_frac = match cfg.row_drop_frac {
        RowDropFrac::Fixed(x) => x,
        RowDropFrac::Uniform(lo, hi) if lo == hi => lo,
        RowDropFrac::Uniform(lo, hi) => rng.random_range(lo..=hi),
    };
    let t = apply_column_dropout(table, cfg.p_col_dropout, rng);
    let t = apply_dummy_encoding(&t, cfg.p_dummy, rng);
    // Columns converted above are numeric now, so one-hot never re-selects them.
    let t = apply_one_hot(&t, cfg.p_onehot, rng);
    let t = inject_missing(&t, cfg.p_missing, rng);
    let t = apply_jitter(&t, cfg.jitter_std, rng);
    let t = apply_column_shuffle(&t, cfg.p_col_shuffle, rng);
    let t = apply_row_drop(&t, row_drop_frac, rng);
    let t = apply_row_shuffle(&t, cfg.p_row_shuffle, rng);
    ViewPair {
        original: table.clone(),
        augmented: t,
        row_drop_frac,
    }
}

fn select_columns(table: &Table, order: &[usize]) -> Table {
    let attributes = order.iter().map(|&j| table.attributes()[j].clone()).collect();
    let rows = table
        .rows()
        .iter()
        .map(|r| order.iter().map(|&j| r[j].clone()).collect())
        .collect();
    Table::new(table.name(), attributes, rows, table.source_dataset())
        .expect("column selection preserves table invariants")
}

fn encode_indicators<R: Rng + ?Sized>(
    table: &Table,
    p: f64,
    rng: &mut R,
    drop_first: bool,
) -> Table {
    if p == 0.0 {
        return table.clone();
    }
    let kinds = table.column_kinds();
    let mut columns: Vec<(String, Vec<CellValue>)> = Vec::new();
    let mut changed = false;
    for (j, (name, cells)) in table.columns().into_iter().enumerate() {
        if kinds[j] != ColumnKind::Categorical || !rng.random_bool(p) {
            columns.push((name, cells));
            continue;
        }
        changed = true;
        let rendered: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
        let categories: BTreeSet<&str> = rendered.iter().map(String::as_str).collect();
        let skip = usize::from(drop_first);
        for cat in categories.into_iter().skip(skip) {
            let values = rendered
                .iter()
                .map(|r| CellValue::Number(if r == cat { 1.0 } else { 0.0 }))
                .collect();
            columns.push((format!("{name}_{cat}"), values));
        }
    }
    if !changed {
        return table.clone();
    }
    if columns.is_empty() {
        // Every column was a constant dummy-encoded categorical; keep the
        // original rather than produce a zero-width table.
        return table.clone();
    }
    dedupe_names(&mut columns);
    Table::from_columns(table.name(), columns, table.source_dataset())
        .expect("indicator encoding preserves table invariants")
}

fn dedupe_names(columns: &mut [(String, Vec<CellValue>)]) {
    let mut used: HashSet<String> = HashSet::new();
    for (name, _) in columns.iter_mut() {
        if !used.insert(name.clone()) {
            let mut k = 2;
            while used.contains(&format!("{name}_{k}")) {
                k += 1;
            }
            *name = format!("{name}_{k}");
            used.insert(name.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat_table(values: &[&str]) -> Table {
        Table::from_columns(
            "t",
            vec![(
                "x".to_string(),
                values.iter().map(|v| CellValue::text(*v)).collect(),
            )],
            "f",
        )
        .unwrap()
    }

    fn numeric_table(rows: usize, cols: usize) -> Table {
        let columns = (0..cols)
            .map(|j| {
                (
                    format!("c{j}"),
                    (0..rows)
                        .map(|i| CellValue::Number((i * cols + j) as f64))
                        .collect(),
                )
            })
            .collect();
        Table::from_columns("t", columns, "f").unwrap()
    }

    fn col_values(t: &Table, name: &str) -> Vec<f64> {
        let j = t.attribute_index(name).unwrap();
        t.column(j).map(|c| c.as_number().unwrap()).collect()
    }

    fn sorted_rows(t: &Table) -> Vec<String> {
        let mut v: Vec<String> = t.rows().iter().map(|r| format!("{r:?}")).collect();
        v.sort();
        v
    }

    #[test]
    fn column_dropout_guards() {
        let t = numeric_table(3, 3);
        assert_eq!(apply_column_dropout(&t, 0.0, &mut stream(1)), t);
        let out = apply_column_dropout(&t, 1.0, &mut stream(1));
        assert_eq!(out.num_columns(), 1);
        assert_eq!(out.num_rows(), 3);
    }

    #[test]
    fn column_dropout_replays_with_same_seed() {
        let t = numeric_table(2, 8);
        let a = apply_column_dropout(&t, 0.5, &mut stream(42));
        let b = apply_column_dropout(&t, 0.5, &mut stream(42));
        assert_eq!(a, b);
        // The subset is exactly the columns whose Bernoulli draw failed.
        let mut rng = stream(42);
        let expected: Vec<String> = t
            .attributes()
            .iter()
            .filter(|_| !rng.random_bool(0.5))
            .cloned()
            .collect();
        if !expected.is_empty() {
            assert_eq!(a.attributes(), expected.as_slice());
        }
    }

    #[test]
    fn dummy_encoding_drops_first_category() {
        let t = cat_table(&["a", "b", "a"]);
        let out = apply_dummy_encoding(&t, 1.0, &mut stream(0));
        assert_eq!(out.attributes(), ["x_b"]);
        assert_eq!(col_values(&out, "x_b"), [0.0, 1.0, 0.0]);
        assert_eq!(apply_dummy_encoding(&t, 0.0, &mut stream(0)), t);
    }

    #[test]
    fn dummy_encoding_of_constant_column_removes_it() {
        let t = Table::from_columns(
            "t",
            vec![
                ("x".into(), vec![CellValue::text("a"), CellValue::text("a")]),
                ("y".into(), vec![CellValue::Number(1.0), CellValue::Number(2.0)]),
            ],
            "f",
        )
        .unwrap();
        let out = apply_dummy_encoding(&t, 1.0, &mut stream(0));
        assert_eq!(out.attributes(), ["y"]);
    }

    #[test]
    fn one_hot_definition() {
        let t = cat_table(&["a", "b", "a"]);
        let out = apply_one_hot(&t, 1.0, &mut stream(0));
        assert_eq!(out.attributes(), ["x_a", "x_b"]);
        assert_eq!(col_values(&out, "x_a"), [1.0, 0.0, 1.0]);
        assert_eq!(col_values(&out, "x_b"), [0.0, 1.0, 0.0]);
        assert_eq!(apply_one_hot(&t, 0.0, &mut stream(0)), t);
    }

    #[test]
    fn missing_is_its_own_category() {
        let t = Table::from_columns(
            "t",
            vec![(
                "Embarked".into(),
                vec![CellValue::text("S"), CellValue::Missing, CellValue::text("C")],
            )],
            "f",
        )
        .unwrap();
        let out = apply_one_hot(&t, 1.0, &mut stream(0));
        assert_eq!(out.attributes(), ["Embarked_C", "Embarked_S", "Embarked_nan"]);
        assert_eq!(col_values(&out, "Embarked_nan"), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn indicator_names_do_not_collide() {
        let t = Table::from_columns(
            "t",
            vec![
                ("x".into(), vec![CellValue::text("a"), CellValue::text("b")]),
                ("x_b".into(), vec![CellValue::Number(1.0), CellValue::Number(2.0)]),
            ],
            "f",
        )
        .unwrap();
        let out = apply_one_hot(&t, 1.0, &mut stream(0));
        assert_eq!(out.attributes(), ["x_a", "x_b", "x_b_2"]);
    }

    #[test]
    fn row_shuffle_preserves_multiset() {
        let t = numeric_table(5, 2);
        assert_eq!(apply_row_shuffle(&t, 0.0, &mut stream(3)), t);
        let out = apply_row_shuffle(&t, 1.0, &mut stream(3));
        assert_eq!(sorted_rows(&out), sorted_rows(&t));
        let one = numeric_table(1, 2);
        assert_eq!(apply_row_shuffle(&one, 1.0, &mut stream(3)), one);
    }

    #[test]
    fn column_shuffle_moves_cells_with_attribute() {
        let t = numeric_table(3, 2);
        assert_eq!(apply_column_shuffle(&t, 0.0, &mut stream(0)), t);
        let swapped = (0..64)
            .map(|s| apply_column_shuffle(&t, 1.0, &mut stream(s)))
            .find(|o| o.attributes()[0] == "c1")
            .expect("some seed swaps two columns");
        assert_eq!(col_values(&swapped, "c0"), col_values(&t, "c0"));
        assert_eq!(col_values(&swapped, "c1"), col_values(&t, "c1"));
        let one = numeric_table(3, 1);
        assert_eq!(apply_column_shuffle(&one, 1.0, &mut stream(0)), one);
    }

    #[test]
    fn row_drop_floor_rule_and_guard() {
        let t = numeric_table(4, 2);
        assert_eq!(apply_row_drop(&t, 0.0, &mut stream(0)), t);
        assert_eq!(apply_row_drop(&t, 0.5, &mut stream(0)).num_rows(), 2);
        let one = numeric_table(1, 2);
        assert_eq!(apply_row_drop(&one, 0.99, &mut stream(0)).num_rows(), 1);
    }

    #[test]
    fn missing_injection_rate() {
        let t = numeric_table(100, 100);
        assert_eq!(inject_missing(&t, 0.0, &mut stream(0)), t);
        let all = inject_missing(&t, 1.0, &mut stream(0));
        assert!(all.rows().iter().flatten().all(CellValue::is_missing));
        // Binomial(10_000, 0.02): mean 200, sd 14; bounds are +-4 sd.
        let out = inject_missing(&t, 0.02, &mut stream(11));
        let count = out.rows().iter().flatten().filter(|c| c.is_missing()).count();
        assert!((140..=260).contains(&count), "{count}");
    }

    #[test]
    fn jitter_statistics() {
        let t = numeric_table(100, 100);
        assert_eq!(apply_jitter(&t, 0.0, &mut stream(0)), t);
        let cats = cat_table(&["a", "b"]);
        assert_eq!(apply_jitter(&cats, 0.01, &mut stream(0)), cats);
        let out = apply_jitter(&t, 0.01, &mut stream(5));
        let diffs: Vec<f64> = out
            .rows()
            .iter()
            .flatten()
            .zip(t.rows().iter().flatten())
            .map(|(a, b)| a.as_number().unwrap() - b.as_number().unwrap())
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        assert!((0.0097..=0.0103).contains(&sd), "{sd}");
    }

    #[test]
    fn make_views_identity_and_determinism() {
        let t = Table::from_columns(
            "t",
            vec![
                ("a".into(), (0..6).map(|i| CellValue::Number(i as f64)).collect()),
                (
                    "b".into(),
                    ["x", "y", "x", "z", "y", "x"].iter().map(|s| CellValue::text(*s)).collect(),
                ),
            ],
            "f",
        )
        .unwrap();
        let v = make_views(&t, &AugmentationConfig::identity());
        assert_eq!(v.augmented, t);
        assert_eq!(v.original, t);

        let cfg = AugmentationConfig {
            p_row_shuffle: 1.0,
            seed: 9,
            ..AugmentationConfig::identity()
        };
        let v = make_views(&t, &cfg);
        assert_eq!(sorted_rows(&v.augmented), sorted_rows(&t));

        let cfg = AugmentationConfig {
            seed: 1234,
            ..AugmentationConfig::default()
        };
        assert_eq!(make_views(&t, &cfg), make_views(&t, &cfg));
        assert_eq!(make_views(&t, &cfg).augmented.source_dataset(), "f");
    }

    #[test]
    fn config_validation() {
        assert!(AugmentationConfig::default().validate().is_ok());
        let bad = AugmentationConfig {
            jitter_std: 0.02,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentationConfig {
            p_dummy: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentationConfig {
            row_drop_frac: RowDropFrac::Fixed(1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn row_drop_frac_parses() {
        assert_eq!("0.25".parse::<RowDropFrac>().unwrap(), RowDropFrac::Fixed(0.25));
        let u: RowDropFrac = "uniform:0.05:0.3".parse().unwrap();
        assert_eq!(u, RowDropFrac::Uniform(0.05, 0.3));
        assert_eq!(u.to_string().parse::<RowDropFrac>().unwrap(), u);
    }
}
