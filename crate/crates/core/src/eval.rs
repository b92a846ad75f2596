//! Corpus-level similarity evaluation.
//!
//! Embeddings are row-normalized and compared by cosine similarity. Every
//! unordered pair of distinct tables is either intra-dataset (same source
//! tag) or inter-dataset. Separation is the mean intra similarity minus the
//! mean inter similarity. TPR is measured on the ground-truth version pairs,
//! TNR on the inter-dataset pairs, both at a threshold `ξ ∈ (0, 1]`.
//!
//! All pair-level metrics accept a [`PairScope`] restricting which pairs
//! count, so that a split can be evaluated on the pairs that touch it.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCorpus {
    ids: Vec<String>,
    families: Vec<String>,
    x: Tensor,
}

impl EmbeddingCorpus {
    pub fn new(ids: Vec<String>, families: Vec<String>, x: Tensor) -> Result<Self> {
        if x.shape().len() != 2 || x.shape()[0] != ids.len() || families.len() != ids.len() {
            return Err(Error::Shape(format!(
                "{} ids, {} families, embeddings {:?}",
                ids.len(),
                families.len(),
                x.shape()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Parse(format!("duplicate table id `{dup}`")));
        }
        if x.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding matrix".into()));
        }
        Ok(EmbeddingCorpus { ids, families, x })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn families(&self) -> &[String] {
        &self.families
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.x
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    /// Writes `id,family,e0,e1,...` rows with a header.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let d = self.x.last_dim();
        let mut header = vec!["id".to_string(), "family".to_string()];
        header.extend((0..d).map(|j| format!("e{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.ids[i].clone(), self.families[i].clone()];
            rec.extend(self.x.row(i).iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let (mut ids, mut families, mut rows) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            if rec.len() < 3 {
                return Err(Error::Parse("embedding row needs id, family, values".into()));
            }
            ids.push(rec[0].to_string());
            families.push(rec[1].to_string());
            let row = rec
                .iter()
                .skip(2)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad embedding value `{v}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let x = if rows.is_empty() {
            Tensor::zeros(&[0, 0])
        } else {
            Tensor::from_rows(&rows)?
        };
        EmbeddingCorpus::new(ids, families, x)
    }
}

/// Unordered version pairs keyed by table id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pairs: BTreeSet<(String, String)>,
}

impl GroundTruth {
    pub fn new() -> Self {
        GroundTruth::default()
    }

    /// Adds the pair; self pairs are ignored.
    pub fn insert(&mut self, a: &str, b: &str) {
        if a != b {
            self.pairs.insert(ordered(a, b));
        }
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.pairs.contains(&ordered(a, b))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// Checks that every id exists and each pair stays within one family.
    pub fn validate(&self, corpus: &EmbeddingCorpus) -> Result<()> {
        for (a, b) in self.pairs() {
            let ia = corpus
                .index_of(a)
                .ok_or_else(|| Error::Parse(format!("unknown table id `{a}` in ground truth")))?;
            let ib = corpus
                .index_of(b)
                .ok_or_else(|| Error::Parse(format!("unknown table id `{b}` in ground truth")))?;
            if corpus.families[ia] != corpus.families[ib] {
                return Err(Error::Parse(format!(
                    "version pair ({a}, {b}) crosses dataset families"
                )));
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, String)> for GroundTruth {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        let mut g = GroundTruth::new();
        for (a, b) in iter {
            g.insert(&a, &b);
        }
        g
    }
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Which unordered pairs `(i, j)` of corpus rows take part in a metric.
#[derive(Debug, Clone, Default)]
pub struct PairScope {
    anchors: Option<HashSet<usize>>,
    excluded: HashSet<usize>,
}

impl PairScope {
    /// Every pair of the corpus.
    pub fn all() -> Self {
        PairScope::default()
    }

    /// Pairs with at least one endpoint in `anchors` and no endpoint in
    /// `excluded`.
    pub fn anchored(
        anchors: impl IntoIterator<Item = usize>,
        excluded: impl IntoIterator<Item = usize>,
    ) -> Self {
        PairScope {
            anchors: Some(anchors.into_iter().collect()),
            excluded: excluded.into_iter().collect(),
        }
    }

    pub fn admits(&self, i: usize, j: usize) -> bool {
        if self.excluded.contains(&i) || self.excluded.contains(&j) {
            return false;
        }
        match &self.anchors {
            Some(a) => a.contains(&i) || a.contains(&j),
            None => true,
        }
    }
}

/// Symmetric cosine similarity matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Writes the matrix as CSV with table ids as row and column labels.
    pub fn save_csv(&self, corpus: &EmbeddingCorpus, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend(corpus.ids.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut rec = vec![corpus.ids[i].clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub fn cosine_matrix(corpus: &EmbeddingCorpus) -> Result<SimilarityMatrix> {
    let n = corpus.len();
    let x = &corpus.x;
    let mut unit: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::ZeroNorm { row: i });
        }
        unit.push(row.iter().map(|v| v / norm).collect());
    }
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
        for j in i + 1..n {
            let s: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            let s = s.clamp(-1.0, 1.0);
            data[i * n + j] = s;
            data[j * n + i] = s;
        }
    }
    Ok(SimilarityMatrix { n, data })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Categories {
    pub self_sims: Vec<f64>,
    pub intra: Vec<f64>,
    pub inter: Vec<f64>,
}

pub fn categorize(theta: &SimilarityMatrix, corpus: &EmbeddingCorpus) -> Categories {
    categorize_in(theta, corpus, &PairScope::all())
}

pub fn categorize_in(
    theta: &SimilarityMatrix,
    corpus: &EmbeddingCorpus,
    scope: &PairScope,
) -> Categories {
    let mut c = Categories::default();
    for i in 0..theta.n {
        if scope.admits(i, i) {
            c.self_sims.push(theta.get(i, i));
        }
        for j in i + 1..theta.n {
            if !scope.admits(i, j) {
                continue;
            }
            if corpus.families[i] == corpus.families[j] {
                c.intra.push(theta.get(i, j));
            } else {
                c.inter.push(theta.get(i, j));
            }
        }
    }
    c
}

pub fn separation(theta: &SimilarityMatrix, corpus: &EmbeddingCorpus) -> Result<f64> {
    separation_in(theta, corpus, &PairScope::all())
}

pub fn separation_in(
    theta: &SimilarityMatrix,
    corpus: &EmbeddingCorpus,
    scope: &PairScope,
) -> Result<f64> {
    let c = categorize_in(theta, corpus, scope);
    if c.intra.is_empty() {
        return Err(Error::EmptyCategory("intra"));
    }
    if c.inter.is_empty() {
        return Err(Error::EmptyCategory("inter"));
    }
    Ok(mean(&c.intra) - mean(&c.inter))
}

/// Similarities of ground-truth pairs and of inter-dataset pairs in scope.
fn labelled_sims(
    theta: &SimilarityMatrix,
    truth: &GroundTruth,
    corpus: &EmbeddingCorpus,
    scope: &PairScope,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let index: HashMap<&str, usize> = corpus
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut positives = Vec::new();
    for (a, b) in truth.pairs() {
        let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) else {
            return Err(Error::Parse(format!("ground-truth pair ({a}, {b}) not in corpus")));
        };
        if scope.admits(i, j) {
            positives.push(theta.get(i, j));
        }
    }
    if positives.is_empty() {
        return Err(Error::EmptyVersionPairs);
    }
    let negatives = categorize_in(theta, corpus, scope).inter;
    if negatives.is_empty() {
        return Err(Error::EmptyCategory("inter"));
    }
    Ok((positives, negatives))
}

fn check_threshold(xi: f64) -> Result<()> {
    if xi > 0.0 && xi <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("threshold {xi} not in (0, 1]")))
    }
}

pub fn tpr_tnr(
    theta: &SimilarityMatrix,
    truth: &GroundTruth,
    corpus: &EmbeddingCorpus,
    xi: f64,
) -> Result<(f64, f64)> {
    tpr_tnr_in(theta, truth, corpus, xi, &PairScope::all())
}

pub fn tpr_tnr_in(
    theta: &SimilarityMatrix,
    truth: &GroundTruth,
    corpus: &EmbeddingCorpus,
    xi: f64,
    scope: &PairScope,
) -> Result<(f64, f64)> {
    check_threshold(xi)?;
    let (pos, neg) = labelled_sims(theta, truth, corpus, scope)?;
    Ok(rates(&pos, &neg, xi))
}

/// TPR and TNR of raw similarity lists at threshold `xi`.
pub fn rates(positives: &[f64], negatives: &[f64], xi: f64) -> (f64, f64) {
    let tp = positives.iter().filter(|&&s| s >= xi).count();
    let tn = negatives.iter().filter(|&&s| s < xi).count();
    (
        tp as f64 / positives.len() as f64,
        tn as f64 / negatives.len() as f64,
    )
}

/// Threshold grid `0.01, 0.02, ..., 1.00`.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (1..=100).map(|k| k as f64 / 100.0)
}

/// Grid threshold maximizing balanced accuracy `(tpr + tnr) / 2`; ties go
/// to the smallest threshold.
pub fn select_threshold(
    theta: &SimilarityMatrix,
    truth: &GroundTruth,
    corpus: &EmbeddingCorpus,
) -> Result<f64> {
    select_threshold_in(theta, truth, corpus, &PairScope::all())
}

pub fn select_threshold_in(
    theta: &SimilarityMatrix,
    truth: &GroundTruth,
    corpus: &EmbeddingCorpus,
    scope: &PairScope,
) -> Result<f64> {
    let (pos, neg) = labelled_sims(theta, truth, corpus, scope)?;
    Ok(select_threshold_from(&pos, &neg))
}

/// Threshold selection over raw similarity lists (both non-empty).
pub fn select_threshold_from(positives: &[f64], negatives: &[f64]) -> f64 {
    let (p, q) = (positives.len() as u64, negatives.len() as u64);
    let mut best: Option<(u64, f64)> = None;
    for xi in threshold_grid() {
        let tp = positives.iter().filter(|&&s| s >= xi).count() as u64;
        let tn = negatives.iter().filter(|&&s| s < xi).count() as u64;
        // Balanced accuracy scaled by 2pq keeps the comparison exact.
        let score = tp * q + tn * p;
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, xi));
        }
    }
    best.map_or(0.01, |(_, xi)| xi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub theta: SimilarityMatrix,
    pub categories: Categories,
    pub tpr: f64,
    pub tnr: f64,
    pub separation: f64,
    pub xi: f64,
}

impl SimilarityReport {
    pub fn summary_line(&self) -> String {
        format!(
            "TPR={:.4} TNR={:.4} SEP={:.4} XI={:.2}",
            self.tpr, self.tnr, self.separation, self.xi
        )
    }

    /// `category,count,mean,std` block followed by the summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,count,mean,std\n");
        for (name, v) in [
            ("self", &self.categories.self_sims),
            ("intra", &self.categories.intra),
            ("inter", &self.categories.inter),
        ] {
            out.push_str(&format!("{name},{},{},{}\n", v.len(), mean(v), std_dev(v)));
        }
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Full report over the pairs admitted by `scope` at threshold `xi`.
pub fn evaluate(
    corpus: &EmbeddingCorpus,
    truth: &GroundTruth,
    xi: f64,
    scope: &PairScope,
) -> Result<SimilarityReport> {
    let theta = cosine_matrix(corpus)?;
    let (tpr, tnr) = tpr_tnr_in(&theta, truth, corpus, xi, scope)?;
    let separation = separation_in(&theta, corpus, scope)?;
    let categories = categorize_in(&theta, corpus, scope);
    Ok(SimilarityReport {
        theta,
        categories,
        tpr,
        tnr,
        separation,
        xi,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}
