//! Bag-of-words corpora: loading, vocabulary cleaning, splits and batching.
//!
//! Two input layouts are accepted: one whitespace-tokenized document per
//! line, or sparse `doc_id word_id count` triplet lines (which need a vocab
//! file). Vocab files hold one token per line; the line number is the id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::numerics::{seeded_rng, Tensor};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("duplicate vocabulary token `{token}` at line {line}")]
    DuplicateToken { token: String, line: usize },
    #[error("label file has {found} entries but the corpus has {expected} documents")]
    LabelMismatch { expected: usize, found: usize },
    #[error("triplet input requires a vocabulary file")]
    MissingVocab,
    #[error("corpus is empty after filtering")]
    Empty,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DocFormat {
    /// One document per line, whitespace tokenized.
    #[default]
    Text,
    /// `doc_id word_id count` per line.
    Triplets,
}

impl std::str::FromStr for DocFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "triplets" | "bow" => Ok(Self::Triplets),
            other => Err(CorpusError::Invalid(format!("unknown document format `{other}`"))),
        }
    }
}

/// Vocabulary construction rules used when no vocab file is supplied.
#[derive(Debug, Clone)]
pub struct CleaningRules {
    /// Tokens occurring fewer than this many times corpus-wide are dropped.
    pub min_count: u64,
    /// Keep at most this many of the most frequent tokens.
    pub max_vocab: Option<usize>,
    pub stopwords: HashSet<String>,
}

impl Default for CleaningRules {
    fn default() -> Self {
        Self {
            min_count: 20,
            max_vocab: None,
            stopwords: HashSet::new(),
        }
    }
}

impl CleaningRules {
    pub fn load_stopwords(&mut self, path: &Path) -> Result<(), CorpusError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        self.stopwords
            .extend(text.split_whitespace().map(str::to_string));
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub format: DocFormat,
    pub vocab_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    pub rules: CleaningRules,
}

/// One document as sorted `(word_id, count)` pairs with non-zero counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    entries: Vec<(u32, u32)>,
}

impl Document {
    /// Build from arbitrary pairs; duplicates are merged and zeros removed.
    pub fn from_counts(pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut map: BTreeMap<u32, u32> = BTreeMap::new();
        for (w, c) in pairs {
            if c > 0 {
                *map.entry(w).or_insert(0) += c;
            }
        }
        Self {
            entries: map.into_iter().collect(),
        }
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn contains(&self, word: u32) -> bool {
        self.entries.binary_search_by_key(&word, |&(w, _)| w).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocab: Vec<String>,
    docs: Vec<Document>,
    labels: Option<Vec<usize>>,
    is_test: Vec<bool>,
    /// Input positions of documents dropped because they were empty after filtering.
    dropped: Vec<usize>,
}

impl Corpus {
    /// Assemble a corpus, dropping empty documents (and their labels).
    pub fn new(
        vocab: Vec<String>,
        docs: Vec<Document>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, t) in vocab.iter().enumerate() {
            if !seen.insert(t.as_str()) {
                return Err(CorpusError::DuplicateToken {
                    token: t.clone(),
                    line: i + 1,
                });
            }
        }
        if let Some(l) = &labels {
            if l.len() != docs.len() {
                return Err(CorpusError::LabelMismatch {
                    expected: docs.len(),
                    found: l.len(),
                });
            }
        }
        let v = vocab.len() as u32;
        if let Some(bad) = docs
            .iter()
            .flat_map(|d| d.entries.iter())
            .find(|&&(w, _)| w >= v)
        {
            return Err(CorpusError::Invalid(format!(
                "word id {} out of range for vocabulary of size {v}",
                bad.0
            )));
        }
        let mut kept_docs = Vec::with_capacity(docs.len());
        let mut kept_labels = labels.as_ref().map(|_| Vec::new());
        let mut dropped = Vec::new();
        for (i, d) in docs.into_iter().enumerate() {
            if d.is_empty() {
                dropped.push(i);
                continue;
            }
            if let (Some(kl), Some(l)) = (&mut kept_labels, &labels) {
                kl.push(l[i]);
            }
            kept_docs.push(d);
        }
        if !dropped.is_empty() {
            log::warn!(
                "dropped {} document(s) with no in-vocabulary tokens",
                dropped.len()
            );
        }
        if kept_docs.is_empty() {
            return Err(CorpusError::Empty);
        }
        let n = kept_docs.len();
        Ok(Self {
            vocab,
            docs: kept_docs,
            labels: kept_labels,
            is_test: vec![false; n],
            dropped,
        })
    }

    /// Tokenize whitespace-separated documents against a vocabulary, or build
    /// one from `rules` when `vocab` is `None`.
    pub fn from_texts<S: AsRef<str>>(
        texts: &[S],
        vocab: Option<Vec<String>>,
        rules: &CleaningRules,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, CorpusError> {
        let vocab = match vocab {
            Some(v) => v,
            None => build_vocab(texts.iter().map(|t| t.as_ref()), rules),
        };
        let index: HashMap<&str, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as u32))
            .collect();
        let docs = texts
            .iter()
            .map(|t| {
                Document::from_counts(
                    t.as_ref()
                        .split_whitespace()
                        .filter_map(|tok| index.get(tok).map(|&w| (w, 1))),
                )
            })
            .collect();
        Self::new(vocab, docs, labels)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    pub fn word_id(&self, token: &str) -> Option<usize> {
        self.vocab.iter().position(|t| t == token)
    }

    /// Assign a seed-determined `test_fraction` of documents to the test split.
    pub fn with_split(mut self, test_fraction: f64, seed: u64) -> Result<Self, CorpusError> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(CorpusError::Invalid(format!(
                "test fraction {test_fraction} must lie in [0, 1)"
            )));
        }
        let n = self.docs.len();
        let n_test = (n as f64 * test_fraction).round() as usize;
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut seeded_rng(seed));
        self.is_test = vec![false; n];
        for &i in &ids[..n_test] {
            self.is_test[i] = true;
        }
        Ok(self)
    }

    pub fn train_ids(&self) -> Vec<usize> {
        (0..self.docs.len()).filter(|&i| !self.is_test[i]).collect()
    }

    pub fn test_ids(&self) -> Vec<usize> {
        (0..self.docs.len()).filter(|&i| self.is_test[i]).collect()
    }

    /// Dense `ids.len() × V` count matrix.
    pub fn dense(&self, ids: &[usize]) -> Tensor {
        let v = self.vocab.len();
        let mut t = Tensor::zeros(ids.len().max(1), v);
        for (r, &id) in ids.iter().enumerate() {
            for &(w, c) in self.docs[id].entries() {
                t.set(r, w as usize, c as f64);
            }
        }
        t
    }

    /// One epoch over the training split in a seed-determined order.
    pub fn batches(&self, batch_size: usize, seed: u64) -> Batches<'_> {
        assert!(batch_size >= 1, "batch size must be at least 1");
        let mut order = self.train_ids();
        order.shuffle(&mut seeded_rng(seed));
        Batches {
            corpus: self,
            order,
            batch_size,
            pos: 0,
        }
    }

    /// Document frequency of every word over the given documents.
    pub fn document_frequencies(&self, ids: &[usize]) -> Vec<u64> {
        let mut df = vec![0u64; self.vocab.len()];
        for &i in ids {
            for &(w, _) in self.docs[i].entries() {
                df[w as usize] += 1;
            }
        }
        df
    }

    /// Write `docs.txt` (triplets), `vocab.txt` and, when present, `labels.txt`.
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let docs_path = dir.join("docs.txt");
        let mut out = io::BufWriter::new(fs::File::create(&docs_path).map_err(io_err(&docs_path))?);
        for (j, d) in self.docs.iter().enumerate() {
            for &(w, c) in d.entries() {
                writeln!(out, "{j} {w} {c}").map_err(io_err(&docs_path))?;
            }
        }
        out.flush().map_err(io_err(&docs_path))?;
        let vocab_path = dir.join("vocab.txt");
        fs::write(&vocab_path, lines(&self.vocab)).map_err(io_err(&vocab_path))?;
        if let Some(labels) = &self.labels {
            let p = dir.join("labels.txt");
            fs::write(&p, lines(labels)).map_err(io_err(&p))?;
        }
        Ok(())
    }

    /// Reload a directory written by [`Corpus::save`].
    pub fn load_dir(dir: &Path) -> Result<Self, CorpusError> {
        let labels = dir.join("labels.txt");
        load_corpus(
            &dir.join("docs.txt"),
            &LoadOptions {
                format: DocFormat::Triplets,
                vocab_path: Some(dir.join("vocab.txt")),
                labels_path: labels.exists().then_some(labels),
                rules: CleaningRules::default(),
            },
        )
    }
}

fn lines<T: std::fmt::Display>(items: &[T]) -> String {
    let mut s = String::new();
    for i in items {
        s.push_str(&i.to_string());
        s.push('\n');
    }
    s
}

/// Vocabulary of tokens seen at least `min_count` times, minus stop words,
/// sorted alphabetically (after truncating to the `max_vocab` most frequent).
pub fn build_vocab<'a>(texts: impl Iterator<Item = &'a str>, rules: &CleaningRules) -> Vec<String> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for t in texts {
        for tok in t.split_whitespace() {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= rules.min_count && !rules.stopwords.contains(t))
        .collect();
    if let Some(max) = rules.max_vocab {
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        kept.truncate(max);
    }
    let mut vocab: Vec<String> = kept.into_iter().map(|(t, _)| t.to_string()).collect();
    vocab.sort();
    vocab
}

pub fn read_vocab(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut vocab = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tok = line.trim();
        if tok.is_empty() || tok.contains(char::is_whitespace) {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "expected exactly one token".into(),
            });
        }
        vocab.push(tok.to_string());
    }
    Ok(vocab)
}

fn read_labels(path: &Path) -> Result<Vec<usize>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| CorpusError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("label is not a non-negative integer: {e}"),
            })
        })
        .collect()
}

fn read_triplets(path: &Path, vocab_size: usize) -> Result<Vec<Document>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows: BTreeMap<usize, Vec<(u32, u32)>> = BTreeMap::new();
    let mut max_doc = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected `doc_id word_id count`, got {} fields", fields.len())));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<u64>()
                .map_err(|e| bad(format!("{what} `{s}` is not a non-negative integer: {e}")))
        };
        let doc = parse(fields[0], "doc_id")? as usize;
        let word = parse(fields[1], "word_id")?;
        let count = parse(fields[2], "count")?;
        if word as usize >= vocab_size {
            return Err(bad(format!(
                "word_id {word} out of range for vocabulary of size {vocab_size}"
            )));
        }
        max_doc = Some(max_doc.map_or(doc, |m: usize| m.max(doc)));
        rows.entry(doc).or_default().push((word as u32, count as u32));
    }
    let n = max_doc.map_or(0, |m| m + 1);
    Ok((0..n)
        .map(|j| Document::from_counts(rows.remove(&j).unwrap_or_default()))
        .collect())
}

pub fn load_corpus(docs_path: &Path, opts: &LoadOptions) -> Result<Corpus, CorpusError> {
    let vocab = opts.vocab_path.as_deref().map(read_vocab).transpose()?;
    let labels = opts.labels_path.as_deref().map(read_labels).transpose()?;
    let raw_docs = match opts.format {
        DocFormat::Triplets => {
            let vocab = vocab.ok_or(CorpusError::MissingVocab)?;
            let docs = read_triplets(docs_path, vocab.len())?;
            check_labels(&labels, docs.len())?;
            return Corpus::new(vocab, docs, labels);
        }
        DocFormat::Text => fs::read_to_string(docs_path).map_err(io_err(docs_path))?,
    };
    let texts: Vec<&str> = raw_docs.lines().collect();
    check_labels(&labels, texts.len())?;
    Corpus::from_texts(&texts, vocab, &opts.rules, labels)
}

fn check_labels(labels: &Option<Vec<usize>>, n: usize) -> Result<(), CorpusError> {
    match labels {
        Some(l) if l.len() != n => Err(CorpusError::LabelMismatch {
            expected: n,
            found: l.len(),
        }),
        _ => Ok(()),
    }
}

/// A dense slice of training documents.
#[derive(Debug, Clone)]
pub struct Batch {
    pub counts: Tensor,
    pub doc_ids: Vec<usize>,
}

pub struct Batches<'a> {
    corpus: &'a Corpus,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let ids = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(Batch {
            counts: self.corpus.dense(&ids),
            doc_ids: ids,
        })
    }
}
