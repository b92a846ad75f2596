//! Table linearization and byte-pair-encoding tokenization.
//!
//! Tables are flattened to text (column-major `COL_<name> v1 v2 ...` by
//! default), lowercased, split on whitespace, and encoded with a BPE model
//! trained on that same kind of text. Encoded sequences are truncated to a
//! fixed length, remapped with `id mod v_model`, and right-padded with 0.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::table::Table;

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

pub const DEFAULT_VOCAB_SIZE: usize = 12_000;
pub const DEFAULT_MAX_LEN: usize = 1_028;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearizeMode {
    /// `COL_<name> v11 v12 ... COL_<name2> v21 ...`
    #[default]
    Flat,
    /// `[COL] a [COL] b [ROW] a1 b1 [ROW] a2 b2 [VAL] c1 c2`: every attribute
    /// but the last is listed as a header and emitted row-wise; the final
    /// attribute's values trail after `[VAL]`.
    Bracketed,
}

impl std::fmt::Display for LinearizeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LinearizeMode::Flat => "flat",
            LinearizeMode::Bracketed => "bracketed",
        })
    }
}

impl std::str::FromStr for LinearizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(LinearizeMode::Flat),
            "bracketed" => Ok(LinearizeMode::Bracketed),
            other => Err(Error::Parse(format!("unknown linearization mode `{other}`"))),
        }
    }
}

pub fn linearize(table: &Table, mode: LinearizeMode) -> String {
    let mut parts: Vec<String> = Vec::new();
    match mode {
        LinearizeMode::Flat => {
            for (j, name) in table.attributes().iter().enumerate() {
                parts.push(format!("COL_{name}"));
                parts.extend(table.column(j).map(|c| c.to_string()));
            }
        }
        LinearizeMode::Bracketed => {
            let n = table.num_columns();
            let lead = n.saturating_sub(1);
            for name in &table.attributes()[..lead] {
                parts.push("[COL]".into());
                parts.push(name.clone());
            }
            if lead > 0 {
                for row in table.rows() {
                    parts.push("[ROW]".into());
                    parts.extend(row[..lead].iter().map(|c| c.to_string()));
                }
            }
            if n > 0 {
                parts.push("[VAL]".into());
                parts.extend(table.column(n - 1).map(|c| c.to_string()));
            }
        }
    }
    parts.join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerSettings {
    pub vocab_size: usize,
    pub min_frequency: u64,
    pub lowercase: bool,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        TokenizerSettings {
            vocab_size: DEFAULT_VOCAB_SIZE,
            min_frequency: 2,
            lowercase: true,
        }
    }
}

impl TokenizerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig(
                "vocab_size must leave room for <PAD> and <UNK>".into(),
            ));
        }
        if self.min_frequency == 0 {
            return Err(Error::InvalidConfig("min_frequency must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    settings: TokenizerSettings,
    /// Tokens indexed by id.
    tokens: Vec<String>,
    vocab: HashMap<String, u32>,
    /// Merge rules in application order.
    merges: Vec<(String, String)>,
    merge_ranks: HashMap<(u32, u32), (usize, u32)>,
}

impl TokenizerModel {
    fn from_parts(
        settings: TokenizerSettings,
        tokens: Vec<String>,
        merges: Vec<(String, String)>,
    ) -> Result<Self> {
        let vocab: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        if vocab.len() != tokens.len() {
            return Err(Error::Parse("duplicate token in vocabulary".into()));
        }
        if vocab.get(PAD) != Some(&PAD_ID) || vocab.get(UNK) != Some(&UNK_ID) {
            return Err(Error::Parse("<PAD> must be id 0 and <UNK> id 1".into()));
        }
        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            let lookup = |t: &str| {
                vocab
                    .get(t)
                    .copied()
                    .ok_or_else(|| Error::Parse(format!("merge references unknown token `{t}`")))
            };
            let merged = lookup(&format!("{a}{b}"))?;
            merge_ranks.insert((lookup(a)?, lookup(b)?), (rank, merged));
        }
        Ok(TokenizerModel {
            settings,
            tokens,
            vocab,
            merges,
            merge_ranks,
        })
    }

    pub fn settings(&self) -> &TokenizerSettings {
        &self.settings
    }

    pub fn vocab_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Raw token ids of `text`, before truncation and remapping.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let normalized;
        let text = if self.settings.lowercase {
            normalized = text.to_lowercase();
            normalized.as_str()
        } else {
            text
        };
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut symbols: Vec<u32> = word
                .chars()
                .map(|c| {
                    let mut buf = [0u8; 4];
                    self.vocab
                        .get(c.encode_utf8(&mut buf) as &str)
                        .copied()
                        .unwrap_or(UNK_ID)
                })
                .collect();
            self.apply_merges(&mut symbols);
            out.extend(symbols);
        }
        out
    }

    fn apply_merges(&self, symbols: &mut Vec<u32>) {
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.merge_ranks.get(&(w[0], w[1])).map(|&(r, id)| (r, i, id)))
                .min();
            let Some((rank, _, merged)) = best else {
                return;
            };
            let mut i = 0;
            let mut out = Vec::with_capacity(symbols.len());
            while i < symbols.len() {
                if i + 1 < symbols.len()
                    && self.merge_ranks.get(&(symbols[i], symbols[i + 1])).map(|m| m.0) == Some(rank)
                {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(symbols[i]);
                    i += 1;
                }
            }
            *symbols = out;
        }
    }

    /// Tokenizes, truncates to `max_len`, remaps ids modulo `v_model`, and pads.
    pub fn encode(&self, text: &str, max_len: usize, v_model: usize) -> TokenSequence {
        TokenSequence::from_raw(&self.tokenize(text), max_len, v_model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "saved-bpe v1").map_err(io)?;
        writeln!(w, "vocab_size={}", self.settings.vocab_size).map_err(io)?;
        writeln!(w, "min_frequency={}", self.settings.min_frequency).map_err(io)?;
        writeln!(w, "lowercase={}", self.settings.lowercase).map_err(io)?;
        writeln!(w, "[vocab]").map_err(io)?;
        for (id, tok) in self.tokens.iter().enumerate() {
            writeln!(w, "{tok}\t{id}").map_err(io)?;
        }
        writeln!(w, "[merges]").map_err(io)?;
        for (a, b) in &self.merges {
            writeln!(w, "{a} {b}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = std::io::BufReader::new(file).lines();
        let mut next = || -> Result<Option<String>> {
            lines.next().transpose().map_err(|e| Error::io(path, e))
        };
        if next()?.as_deref() != Some("saved-bpe v1") {
            return Err(Error::Parse("not a tokenizer model file".into()));
        }
        let mut settings = TokenizerSettings::default();
        let mut tokens: Vec<String> = Vec::new();
        let mut merges = Vec::new();
        #[derive(PartialEq)]
        enum Section {
            Header,
            Vocab,
            Merges,
        }
        let mut section = Section::Header;
        while let Some(line) = next()? {
            match section {
                _ if line == "[vocab]" && section == Section::Header => section = Section::Vocab,
                _ if line == "[merges]" && section == Section::Vocab => section = Section::Merges,
                Section::Header => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| Error::Parse(format!("bad header line `{line}`")))?;
                    let bad = || Error::Parse(format!("bad value for {k}: `{v}`"));
                    match k {
                        "vocab_size" => settings.vocab_size = v.parse().map_err(|_| bad())?,
                        "min_frequency" => settings.min_frequency = v.parse().map_err(|_| bad())?,
                        "lowercase" => settings.lowercase = v.parse().map_err(|_| bad())?,
                        _ => return Err(Error::Parse(format!("unknown header key `{k}`"))),
                    }
                }
                Section::Vocab => {
                    let (tok, id) = line
                        .split_once('\t')
                        .ok_or_else(|| Error::Parse(format!("bad vocab line `{line}`")))?;
                    let id: usize = id
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad id in `{line}`")))?;
                    if id != tokens.len() {
                        return Err(Error::Parse(format!("vocab ids not dense at `{line}`")));
                    }
                    tokens.push(tok.to_string());
                }
                Section::Merges => {
                    let (a, b) = line
                        .split_once(' ')
                        .ok_or_else(|| Error::Parse(format!("bad merge line `{line}`")))?;
                    merges.push((a.to_string(), b.to_string()));
                }
            }
        }
        TokenizerModel::from_parts(settings, tokens, merges)
    }
}

/// Trains a BPE model on `corpus`.
///
/// The initial vocabulary is `<PAD>`, `<UNK>`, then every character of the
/// normalized corpus in code-point order. Merges are chosen greedily by pair
/// frequency (ties broken by the smaller id pair) until the vocabulary
/// reaches `vocab_size` or no pair occurs at least `min_frequency` times.
pub fn train_tokenizer(corpus: &[String], settings: &TokenizerSettings) -> Result<TokenizerModel> {
    settings.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for doc in corpus {
        let doc = if settings.lowercase {
            doc.to_lowercase()
        } else {
            doc.clone()
        };
        for w in doc.split_whitespace() {
            *word_counts.entry(w.to_string()).or_default() += 1;
        }
    }

    let mut tokens: Vec<String> = vec![PAD.into(), UNK.into()];
    let alphabet: std::collections::BTreeSet<char> =
        word_counts.keys().flat_map(|w| w.chars()).collect();
    for c in alphabet {
        if tokens.len() >= settings.vocab_size {
            break;
        }
        tokens.push(c.to_string());
    }
    let mut vocab: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();

    let mut words: Vec<Vec<u32>> = Vec::with_capacity(word_counts.len());
    let mut counts: Vec<u64> = Vec::with_capacity(word_counts.len());
    for (w, c) in &word_counts {
        words.push(
            w.chars()
                .map(|ch| vocab.get(ch.to_string().as_str()).copied().unwrap_or(UNK_ID))
                .collect(),
        );
        counts.push(*c);
    }

    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut pair_words: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.windows(2) {
            let key = (p[0], p[1]);
            *pair_counts.entry(key).or_default() += counts[wi];
            pair_words.entry(key).or_default().insert(wi);
        }
    }
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&pair, &count)| Candidate { count, pair })
        .collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    while tokens.len() < settings.vocab_size {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count {
            // Stale entry; re-queue with the live count.
            if current > 0 {
                heap.push(Candidate {
                    count: current,
                    pair: top.pair,
                });
            }
            continue;
        }
        if current < settings.min_frequency {
            break;
        }
        let (a, b) = top.pair;
        let merged = format!("{}{}", tokens[a as usize], tokens[b as usize]);
        let new_id = match vocab.get(&merged) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as u32;
                tokens.push(merged.clone());
                vocab.insert(merged, id);
                id
            }
        };
        merges.push((tokens[a as usize].clone(), tokens[b as usize].clone()));

        let affected: Vec<usize> = {
            let mut v: Vec<usize> = pair_words
                .remove(&top.pair)
                .unwrap_or_default()
                .into_iter()
                .collect();
            v.sort_unstable();
            v
        };
        pair_counts.remove(&top.pair);
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for wi in affected {
            let w = &words[wi];
            let c = counts[wi];
            for p in w.windows(2) {
                let key = (p[0], p[1]);
                if key == top.pair {
                    continue;
                }
                if let Some(n) = pair_counts.get_mut(&key) {
                    *n -= c;
                    touched.insert(key);
                }
            }
            let mut out = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == a && w[i + 1] == b {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(w[i]);
                    i += 1;
                }
            }
            for p in out.windows(2) {
                let key = (p[0], p[1]);
                *pair_counts.entry(key).or_default() += c;
                pair_words.entry(key).or_default().insert(wi);
                touched.insert(key);
            }
            words[wi] = out;
        }
        for key in touched {
            match pair_counts.get(&key).copied() {
                Some(0) => {
                    pair_counts.remove(&key);
                }
                Some(count) => heap.push(Candidate { count, pair: key }),
                None => {}
            }
        }
    }

    TokenizerModel::from_parts(settings.clone(), tokens, merges)
}

#[derive(Debug, PartialEq, Eq)]
struct Candidate {
    count: u64,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.pair.cmp(&self.pair))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Fixed-length id sequence; positions at or beyond `true_length` are PAD.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
    true_length: usize,
}

impl TokenSequence {
    /// Truncates `raw` to `max_len`, remaps every id to `id % v_model`, pads with 0.
    pub fn from_raw(raw: &[u32], max_len: usize, v_model: usize) -> Self {
        assert!(v_model > 0, "model vocabulary must be non-empty");
        let true_length = raw.len().min(max_len);
        let mut ids: Vec<u32> = raw[..true_length]
            .iter()
            .map(|&id| id % v_model as u32)
            .collect();
        ids.resize(max_len, PAD_ID);
        TokenSequence { ids, true_length }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// The non-pad prefix.
    pub fn tokens(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }

    pub fn true_length(&self) -> usize {
        self.true_length
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Same content, padded out to a longer fixed length.
    pub fn padded_to(&self, max_len: usize) -> Self {
        let mut ids = self.ids.clone();
        ids.resize(max_len.max(self.true_length), PAD_ID);
        TokenSequence {
            ids,
            true_length: self.true_length,
        }
    }

    /// Little-endian 32-bit dump of all `max_len` ids.
    pub fn write_le<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for id in &self.ids {
            w.write_all(&id.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads back a dump written by [`TokenSequence::write_le`]. The true
    /// length is not stored, so it is recovered as the position after the
    /// last non-zero id.
    pub fn read_le(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 4 != 0 {
            return Err(Error::Parse("token dump length not a multiple of 4".into()));
        }
        let ids: Vec<u32> = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let true_length = ids.iter().rposition(|&i| i != PAD_ID).map_or(0, |p| p + 1);
        Ok(TokenSequence { ids, true_length })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::CellValue;

    fn settings(vocab_size: usize, min_frequency: u64) -> TokenizerSettings {
        TokenizerSettings {
            vocab_size,
            min_frequency,
            lowercase: true,
        }
    }

    fn example_table() -> Table {
        Table::from_columns(
            "v1",
            vec![
                ("id".into(), vec![CellValue::Number(1.0), CellValue::Number(2.0)]),
                ("name".into(), vec![CellValue::text("Alice"), CellValue::text("Bob")]),
                ("score".into(), vec![CellValue::Number(83.0), CellValue::Number(91.0)]),
            ],
            "toy",
        )
        .unwrap()
    }

    #[test]
    fn flat_linearization() {
        let t = Table::from_columns(
            "t",
            vec![
                ("c1".into(), vec![CellValue::text("a"), CellValue::text("b")]),
                ("c2".into(), vec![CellValue::Number(1.0), CellValue::Number(2.0)]),
            ],
            "f",
        )
        .unwrap();
        assert_eq!(linearize(&t, LinearizeMode::Flat), "COL_c1 a b COL_c2 1 2");
        let one = Table::from_columns("t", vec![("x".into(), vec![CellValue::Number(5.0)])], "f")
            .unwrap();
        assert_eq!(linearize(&one, LinearizeMode::Flat), "COL_x 5");
    }

    #[test]
    fn bracketed_linearization_matches_worked_example() {
        assert_eq!(
            linearize(&example_table(), LinearizeMode::Bracketed),
            "[COL] id [COL] name [ROW] 1 Alice [ROW] 2 Bob [VAL] 83 91"
        );
    }

    #[test]
    fn missing_renders_as_nan() {
        let t = Table::from_columns(
            "t",
            vec![("x".into(), vec![CellValue::Missing, CellValue::Number(0.5)])],
            "f",
        )
        .unwrap();
        assert_eq!(linearize(&t, LinearizeMode::Flat), "COL_x nan 0.5");
    }

    #[test]
    fn bpe_learns_frequent_pair() {
        let m = train_tokenizer(&["aa aa".into()], &settings(100, 2)).unwrap();
        assert_eq!(m.merges(), [("a".to_string(), "a".to_string())]);
        assert_eq!(m.tokenize("aa"), vec![m.token_id("aa").unwrap()]);
    }

    #[test]
    fn bpe_respects_min_frequency() {
        let m = train_tokenizer(&["ab".into()], &settings(100, 2)).unwrap();
        assert!(m.merges().is_empty());
        assert_eq!(m.vocab_len(), 4);
    }

    #[test]
    fn bpe_hand_simulated_merge_sequence() {
        // words: "abab" x1, "ab" x2 -> pair counts (a,b)=4, (b,a)=1.
        // merge 1: (a,b) -> "ab"; words become [ab,ab], [ab] -> (ab,ab)=1 < 2 stop.
        let m = train_tokenizer(&["abab ab ab".into()], &settings(100, 2)).unwrap();
        assert_eq!(m.merges(), [("a".to_string(), "b".to_string())]);
        let ab = m.token_id("ab").unwrap();
        assert_eq!(m.tokenize("abab"), vec![ab, ab]);
    }

    #[test]
    fn bpe_stops_at_vocab_size() {
        let corpus = vec!["hello hello world world hello world".to_string()];
        let full = train_tokenizer(&corpus, &settings(1000, 2)).unwrap();
        let capped = train_tokenizer(&corpus, &settings(12, 2)).unwrap();
        assert!(full.vocab_len() > 12);
        assert_eq!(capped.vocab_len(), 12);
        assert_eq!(capped.merges(), &full.merges()[..capped.merges().len()]);
    }

    #[test]
    fn training_is_deterministic() {
        let corpus: Vec<String> = (0..20)
            .map(|i| format!("COL_x {} {} abc{} abd", i, i * 7, i % 3))
            .collect();
        let a = train_tokenizer(&corpus, &settings(200, 2)).unwrap();
        let b = train_tokenizer(&corpus, &settings(200, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            train_tokenizer(&[], &settings(10, 2)),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn lowercases_and_maps_unknown_chars() {
        let m = train_tokenizer(&["abc abc".into()], &settings(100, 2)).unwrap();
        assert_eq!(m.tokenize("ABC"), m.tokenize("abc"));
        assert_eq!(m.tokenize("z"), vec![UNK_ID]);
    }

    #[test]
    fn remapping_reproduces_worked_example() {
        let s = TokenSequence::from_raw(&[5021, 7422, 3195], 8, 5000);
        assert_eq!(s.ids(), [21, 2422, 3195, 0, 0, 0, 0, 0]);
        assert_eq!(s.true_length(), 3);
    }

    #[test]
    fn empty_and_truncated_sequences() {
        let m = train_tokenizer(&["abc abc".into()], &settings(100, 2)).unwrap();
        let s = m.encode("", 16, 100);
        assert_eq!(s.true_length(), 0);
        assert!(s.ids().iter().all(|&i| i == 0));

        let raw: Vec<u32> = (0..23).collect();
        let s = TokenSequence::from_raw(&raw, 16, 100);
        assert_eq!(s.true_length(), 16);
        assert_eq!(s.ids(), &raw[..16]);
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = vec![linearize(&example_table(), LinearizeMode::Flat); 3];
        let m = train_tokenizer(&corpus, &settings(60, 2)).unwrap();
        let p = dir.path().join("tok.txt");
        m.save(&p).unwrap();
        let back = TokenizerModel::load(&p).unwrap();
        assert_eq!(back, m);
        let body = std::fs::read_to_string(&p).unwrap();
        assert!(body.contains("<PAD>\t0\n<UNK>\t1\n"));
    }

    #[test]
    fn le_dump_round_trip() {
        let s = TokenSequence::from_raw(&[7, 300, 2], 6, 1000);
        let mut buf = Vec::new();
        s.write_le(&mut buf).unwrap();
        assert_eq!(buf.len(), 24);
        assert_eq!(&buf[4..8], &300u32.to_le_bytes());
        assert_eq!(TokenSequence::read_le(&buf).unwrap(), s);
    }
}
