//! Synthetic version-discovery benchmarks with ground truth.
//!
//! Each family starts from one seed table. Versions are derived by applying
//! a [`TransformationSpec`], an ordered composition of augmentation
//! operators with fixed parameters and seeds, to the seed or to an earlier
//! version, so derivation forms a tree. Versionhood is transitive within a
//! tree: every pair of tables in one tree is recorded as a version pair.
//! Optional decoys share a family tag but come from a fresh seed and are not
//! versions of anything.
//!
//! On disk a benchmark is a directory of CSV files plus `manifest.txt`:
//!
//! ```text
//! TABLE <id> <family> <path>
//! PROV <id> seed|decoy
//! PROV <id> <parent-id> <op>;<op>;...
//! PAIR <id1> <id2>
//! ```

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::augment::{self, stream, Stream};
use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::table::{self, CellValue, Table};

/// Upper bound on jitter used by benchmark transformations.
pub const MAX_BENCH_JITTER: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operator {
    ColumnDropout { p: f64 },
    DummyEncoding { p: f64 },
    OneHot { p: f64 },
    RowShuffle { p: f64 },
    ColumnShuffle { p: f64 },
    RowDrop { frac: f64 },
    MissingInjection { p: f64 },
    Jitter { std: f64 },
}

impl Operator {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Operator::ColumnDropout { p }
            | Operator::DummyEncoding { p }
            | Operator::OneHot { p }
            | Operator::RowShuffle { p }
            | Operator::ColumnShuffle { p }
            | Operator::MissingInjection { p } => (0.0..=1.0).contains(&p),
            Operator::RowDrop { frac } => (0.0..1.0).contains(&frac),
            Operator::Jitter { std } => (0.0..=MAX_BENCH_JITTER).contains(&std),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid operator parameter: {self}")))
        }
    }

    fn apply(&self, table: &Table, seed: u64) -> Table {
        let rng = &mut stream(seed);
        match *self {
            Operator::ColumnDropout { p } => augment::apply_column_dropout(table, p, rng),
            Operator::DummyEncoding { p } => augment::apply_dummy_encoding(table, p, rng),
            Operator::OneHot { p } => augment::apply_one_hot(table, p, rng),
            Operator::RowShuffle { p } => augment::apply_row_shuffle(table, p, rng),
            Operator::ColumnShuffle { p } => augment::apply_column_shuffle(table, p, rng),
            Operator::RowDrop { frac } => augment::apply_row_drop(table, frac, rng),
            Operator::MissingInjection { p } => augment::inject_missing(table, p, rng),
            Operator::Jitter { std } => augment::apply_jitter(table, std, rng),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_jitter: f64) -> Self {
        match rng.random_range(0..8) {
            0 => Operator::ColumnDropout {
                p: rng.random_range(0.1..=0.3),
            },
            1 => Operator::DummyEncoding {
                p: rng.random_range(0.5..=1.0),
            },
            2 => Operator::OneHot {
                p: rng.random_range(0.5..=1.0),
            },
            3 => Operator::RowShuffle { p: 1.0 },
            4 => Operator::ColumnShuffle { p: 1.0 },
            5 => Operator::RowDrop {
                frac: rng.random_range(0.05..=0.3),
            },
            6 => Operator::MissingInjection {
                p: rng.random_range(0.01..=0.05),
            },
            _ => Operator::Jitter {
                std: rng.random_range(max_jitter * 0.1..=max_jitter),
            },
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operator::ColumnDropout { p } => write!(f, "column_dropout(p={p})"),
            Operator::DummyEncoding { p } => write!(f, "dummy_encoding(p={p})"),
            Operator::OneHot { p } => write!(f, "one_hot(p={p})"),
            Operator::RowShuffle { p } => write!(f, "row_shuffle(p={p})"),
            Operator::ColumnShuffle { p } => write!(f, "column_shuffle(p={p})"),
            Operator::RowDrop { frac } => write!(f, "row_drop(frac={frac})"),
            Operator::MissingInjection { p } => write!(f, "missing(p={p})"),
            Operator::Jitter { std } => write!(f, "jitter(std={std})"),
        }
    }
}

/// One operator with the seed of its private random stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub op: Operator,
    pub seed: u64,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.op.to_string();
        // "name(k=v)" -> "name(k=v,seed=S)"
        write!(f, "{},seed={})", &s[..s.len() - 1], self.seed)
    }
}

impl FromStr for Step {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad transformation step `{s}`"));
        let (name, args) = s
            .strip_suffix(')')
            .and_then(|s| s.split_once('('))
            .ok_or_else(bad)?;
        let mut value = None;
        let mut seed = None;
        for kv in args.split(',') {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            if k == "seed" {
                seed = Some(v.parse::<u64>().map_err(|_| bad())?);
            } else {
                value = Some(v.parse::<f64>().map_err(|_| bad())?);
            }
        }
        let (x, seed) = (value.ok_or_else(bad)?, seed.ok_or_else(bad)?);
        let op = match name {
            "column_dropout" => Operator::ColumnDropout { p: x },
            "dummy_encoding" => Operator::DummyEncoding { p: x },
            "one_hot" => Operator::OneHot { p: x },
            "row_shuffle" => Operator::RowShuffle { p: x },
            "column_shuffle" => Operator::ColumnShuffle { p: x },
            "row_drop" => Operator::RowDrop { frac: x },
            "missing" => Operator::MissingInjection { p: x },
            "jitter" => Operator::Jitter { std: x },
            _ => return Err(bad()),
        };
        Ok(Step { op, seed })
    }
}

/// A non-empty composition of operators, applied left to right.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformationSpec {
    steps: Vec<Step>,
}

impl TransformationSpec {
    pub fn new(steps: Vec<Step>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidConfig("transformation spec is empty".into()));
        }
        for s in &steps {
            s.op.validate()?;
        }
        Ok(TransformationSpec { steps })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }
}

impl fmt::Display for TransformationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.steps.iter().map(Step::to_string).collect();
        f.write_str(&parts.join(";"))
    }
}

impl FromStr for TransformationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let steps = s
            .split(';')
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Step>>>()?;
        TransformationSpec::new(steps)
    }
}

pub fn derive_version(table: &Table, spec: &TransformationSpec) -> Result<Table> {
    let mut out = table.clone();
    for step in &spec.steps {
        step.op.validate()?;
        out = step.op.apply(&out, step.seed);
    }
    Ok(out)
}

/// 64-bit FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn family_key(family: &str) -> u64 {
    family.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

const SYLLABLES: [&str; 32] = [
    "ka", "lo", "mi", "ru", "te", "zo", "pa", "ne", "vi", "su", "do", "ra", "fe", "gu", "hi", "bo",
    "ja", "ke", "li", "mo", "nu", "pe", "qi", "ro", "sa", "ti", "wu", "xe", "ya", "ze", "cho", "sha",
];

/// Syllables of a family's private lexicon.
const LEXICON_SIZE: usize = 5;

/// Random seed table of one family.
///
/// Each family draws column names and categorical words from its own small
/// syllable lexicon, the way unrelated datasets use unrelated vocabularies.
/// Numeric columns draw from a two-component Gaussian mixture whose means
/// are shifted by a family-specific offset. The lexicon, column names and
/// offsets depend on the family name alone.
pub fn generate_seed_table(
    family: &str,
    rows: usize,
    num_numeric: usize,
    num_categorical: usize,
    seed: u64,
) -> Result<Table> {
    if rows < 4 || num_numeric + num_categorical < 2 {
        return Err(Error::InvalidConfig(
            "seed tables need at least 4 rows and 2 columns".into(),
        ));
    }
    let key = family_key(family);
    let mut rng = stream(seed ^ key.rotate_left(17));
    // The schema depends on the family only, so decoys share it.
    let mut schema = stream(key);
    let mut lexicon = SYLLABLES.to_vec();
    lexicon.shuffle(&mut schema);
    lexicon.truncate(LEXICON_SIZE);
    let word = |rng: &mut Stream, syllables: usize| -> String {
        (0..syllables)
            .map(|_| lexicon[rng.random_range(0..lexicon.len())])
            .collect()
    };
    let mut names: Vec<String> = Vec::with_capacity(num_numeric + num_categorical);
    while names.len() < num_numeric + num_categorical {
        let name = word(&mut schema, 3);
        if !names.contains(&name) {
            names.push(name);
        }
    }
    let offset = (key % 97) as f64 * 10.0;
    let tag: String = family
        .chars()
        .map(|c| if c.is_whitespace() || c == ',' { '_' } else { c })
        .collect();

    let mut columns = Vec::with_capacity(num_numeric + num_categorical);
    for c in 0..num_numeric {
        let centers = [
            offset + c as f64 * 25.0 + rng.random_range(0.0..5.0),
            offset + c as f64 * 25.0 + rng.random_range(8.0..15.0),
        ];
        let spread = rng.random_range(0.5..2.0);
        let cells = (0..rows)
            .map(|_| {
                let mu = centers[usize::from(rng.random_bool(0.5))];
                let z: f64 = rng.sample(StandardNormal);
                CellValue::Number(((mu + spread * z) * 100.0).round() / 100.0)
            })
            .collect();
        columns.push((names[c].clone(), cells));
    }
    for c in 0..num_categorical {
        let k = rng.random_range(3..=6);
        let alphabet: Vec<String> = (0..k).map(|_| word(&mut rng, 2)).collect();
        let cells = (0..rows)
            .map(|_| CellValue::text(alphabet[rng.random_range(0..k)].clone()))
            .collect();
        columns.push((names[num_numeric + c].clone(), cells));
    }
    Table::from_columns(format!("{tag}_seed"), columns, family)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub families: usize,
    pub versions_per_seed: usize,
    pub depth_range: (usize, usize),
    pub rows: usize,
    pub num_numeric: usize,
    pub num_categorical: usize,
    pub decoys_per_family: usize,
    pub max_jitter: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            families: 4,
            versions_per_seed: 6,
            depth_range: (1, 3),
            rows: 12,
            num_numeric: 3,
            num_categorical: 2,
            decoys_per_family: 0,
            max_jitter: MAX_BENCH_JITTER,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families == 0 || self.versions_per_seed == 0 {
            return Err(Error::InvalidConfig(
                "families and versions_per_seed must be >= 1".into(),
            ));
        }
        let (lo, hi) = self.depth_range;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!("bad depth range ({lo}, {hi})")));
        }
        if !(self.max_jitter > 0.0 && self.max_jitter <= MAX_BENCH_JITTER) {
            return Err(Error::InvalidConfig(format!(
                "max_jitter {} not in (0, {MAX_BENCH_JITTER}]",
                self.max_jitter
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Seed,
    Decoy,
    Derived {
        parent: String,
        spec: TransformationSpec,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRecord {
    pub id: String,
    pub family: String,
    pub path: PathBuf,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchmarkManifest {
    pub tables: Vec<TableRecord>,
    pub version_pairs: GroundTruth,
}

impl BenchmarkManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.tables {
            out.push_str(&format!("TABLE {} {} {}\n", r.id, r.family, r.path.display()));
        }
        for r in &self.tables {
            match &r.provenance {
                Provenance::Seed => out.push_str(&format!("PROV {} seed\n", r.id)),
                Provenance::Decoy => out.push_str(&format!("PROV {} decoy\n", r.id)),
                Provenance::Derived { parent, spec } => {
                    out.push_str(&format!("PROV {} {} {}\n", r.id, parent, spec))
                }
            }
        }
        for (a, b) in self.version_pairs.pairs() {
            out.push_str(&format!("PAIR {a} {b}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = BenchmarkManifest::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Parse(format!("manifest line {}: `{line}`", n + 1));
            let fields: Vec<&str> = line.splitn(4, ' ').collect();
            match fields.as_slice() {
                ["TABLE", id, family, path] => m.tables.push(TableRecord {
                    id: id.to_string(),
                    family: family.to_string(),
                    path: PathBuf::from(path),
                    provenance: Provenance::Seed,
                }),
                ["PROV", id, rest @ ..] => {
                    let prov = match rest {
                        ["seed"] => Provenance::Seed,
                        ["decoy"] => Provenance::Decoy,
                        [parent, spec] => Provenance::Derived {
                            parent: parent.to_string(),
                            spec: spec.parse()?,
                        },
                        _ => return Err(bad()),
                    };
                    let rec = m.tables.iter_mut().find(|r| r.id == *id).ok_or_else(bad)?;
                    rec.provenance = prov;
                }
                ["PAIR", a, b] => m.version_pairs.insert(a, b),
                _ => return Err(bad()),
            }
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BenchmarkManifest::parse(&text)
    }

    pub fn family_of(&self, id: &str) -> Option<&str> {
        self.tables
            .iter()
            .find(|r| r.id == id)
            .map(|r| r.family.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub tables: Vec<Table>,
    pub manifest: BenchmarkManifest,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl Benchmark {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (t, rec) in self.tables.iter().zip(&self.manifest.tables) {
            table::save_table(t, dir.join(&rec.path))?;
        }
        let mpath = dir.join(MANIFEST_FILE);
        let mut f = std::fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
        f.write_all(self.manifest.to_text().as_bytes())
            .map_err(|e| Error::io(&mpath, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = BenchmarkManifest::load(dir.join(MANIFEST_FILE))?;
        let tables = manifest
            .tables
            .iter()
            .map(|r| table::load_table(dir.join(&r.path), &r.id, &r.family))
            .collect::<Result<Vec<_>>>()?;
        Ok(Benchmark { tables, manifest })
    }
}

pub fn generate_benchmark(cfg: &BenchConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let mut master = stream(cfg.seed);
    let mut tables = Vec::new();
    let mut manifest = BenchmarkManifest::default();
    for f in 0..cfg.families {
        let family = format!("fam{f:02}");
        let family_seed = master.next_u64();
        let mut rng = stream(family_seed);
        let seed_table = generate_seed_table(
            &family,
            cfg.rows,
            cfg.num_numeric,
            cfg.num_categorical,
            rng.next_u64(),
        )?;
        let mut tree: Vec<(String, Table)> = vec![(format!("{family}_seed"), seed_table)];
        let mut records = vec![TableRecord {
            id: tree[0].0.clone(),
            family: family.clone(),
            path: PathBuf::from(format!("{}.csv", tree[0].0)),
            provenance: Provenance::Seed,
        }];
        for v in 1..=cfg.versions_per_seed {
            let parent = rng.random_range(0..tree.len());
            let depth = rng.random_range(cfg.depth_range.0..=cfg.depth_range.1);
            let steps = (0..depth)
                .map(|_| Step {
                    op: Operator::random(&mut rng, cfg.max_jitter),
                    seed: rng.next_u64(),
                })
                .collect();
            let spec = TransformationSpec::new(steps)?;
            let id = format!("{family}_v{v:02}");
            let table = derive_version(&tree[parent].1, &spec)?.with_name(&id);
            records.push(TableRecord {
                id: id.clone(),
                family: family.clone(),
                path: PathBuf::from(format!("{id}.csv")),
                provenance: Provenance::Derived {
                    parent: tree[parent].0.clone(),
                    spec,
                },
            });
            tree.push((id, table));
        }
        for i in 0..tree.len() {
            for j in i + 1..tree.len() {
                manifest.version_pairs.insert(&tree[i].0, &tree[j].0);
            }
        }
        for d in 1..=cfg.decoys_per_family {
            let id = format!("{family}_d{d:02}");
            let t = generate_seed_table(
                &family,
                cfg.rows,
                cfg.num_numeric,
                cfg.num_categorical,
                rng.next_u64(),
            )?
            .with_name(&id);
            records.push(TableRecord {
                id: id.clone(),
                family: family.clone(),
                path: PathBuf::from(format!("{id}.csv")),
                provenance: Provenance::Decoy,
            });
            tree.push((id, t));
        }
        let (ids, ts): (Vec<String>, Vec<Table>) = tree.into_iter().unzip();
        debug_assert!(ids.iter().zip(&records).all(|(a, r)| *a == r.id));
        tables.extend(ts.into_iter().zip(&ids).map(|(t, id)| t.with_name(id)));
        manifest.tables.extend(records);
    }
    Ok(Benchmark { tables, manifest })
}
