//! Topic-quality metrics behind a name-addressable registry.

use std::fmt;
use std::sync::Arc;

use crate::corpus::Corpus;
use crate::numerics::Tensor;

use super::EvalError;

/// Per-word embeddings for the WE metric; `None` marks a word without a vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    vectors: Vec<Option<Vec<f64>>>,
}

impl WordVectors {
    /// Columns of a `d × V` matrix, e.g. the model's layer-0 embeddings.
    pub fn from_columns(e: &Tensor) -> Self {
        Self {
            vectors: (0..e.cols()).map(|c| Some(e.column_vec(c))).collect(),
        }
    }

    pub fn new(vectors: Vec<Option<Vec<f64>>>) -> Self {
        Self { vectors }
    }

    /// Parse `word x1 x2 …` lines (GloVe text layout) against `vocab`.
    pub fn parse(text: &str, vocab: &[String]) -> Result<Self, EvalError> {
        let index: std::collections::HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        let mut vectors = vec![None; vocab.len()];
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let v: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| EvalError::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            if *dim.get_or_insert(v.len()) != v.len() {
                return Err(EvalError::Parse {
                    line: i + 1,
                    reason: format!("expected {} components, found {}", dim.unwrap_or(0), v.len()),
                });
            }
            if let Some(&id) = index.get(word) {
                vectors[id] = Some(v);
            }
        }
        Ok(Self { vectors })
    }

    pub fn get(&self, word: usize) -> Option<&[f64]> {
        self.vectors.get(word).and_then(|v| v.as_deref())
    }
}

/// Everything a metric may look at.
#[derive(Debug, Clone, Copy)]
pub struct MetricInput<'a> {
    /// Ranked word ids per topic, at least as long as any metric needs.
    pub topics: &'a [Vec<usize>],
    /// Reference corpus and the documents of it to count in.
    pub corpus: &'a Corpus,
    pub reference_docs: &'a [usize],
    pub vectors: Option<&'a WordVectors>,
}

pub trait TopicMetric: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn compute(&self, input: &MetricInput<'_>) -> Result<f64, EvalError>;
}

/// NPMI statistics of one topic collection.
#[derive(Debug, Clone, PartialEq)]
pub struct Coherence {
    pub mean: f64,
    pub per_topic: Vec<f64>,
    /// Pairs skipped because a word never occurs in the reference documents.
    pub skipped_pairs: usize,
}

/// Smoothing floor for joint document probabilities.
pub const NPMI_EPS: f64 = 1e-12;

/// `NPMI(i, j) = ln(p_ij / (p_i p_j)) / (−ln p_ij)` from document probabilities
/// with `p_ij` floored at [`NPMI_EPS`]. A pair present in every document scores 1.
pub fn npmi(df_i: u64, df_j: u64, df_ij: u64, n_docs: u64) -> f64 {
    let n = n_docs as f64;
    let (pmi, denom) = if df_ij == 0 {
        let pij = NPMI_EPS;
        ((pij * n * n / (df_i as f64 * df_j as f64)).ln(), -pij.ln())
    } else {
        // ratios of exact integer products, so perfect co-occurrence gives exactly 1
        let joint = (df_ij as f64 * n / (df_i as f64 * df_j as f64)).ln();
        (joint, (n / df_ij as f64).ln())
    };
    if denom <= 0.0 {
        return 1.0;
    }
    (pmi / denom).clamp(-1.0, 1.0)
}

/// Mean NPMI over all pairs of each topic's first `top_n` words, then over topics.
pub fn topic_coherence_npmi(topics: &[Vec<usize>], corpus: &Corpus, docs: &[usize], top_n: usize) -> Coherence {
    let n_docs = docs.len() as u64;
    let v = corpus.vocab_size();
    let needed: std::collections::BTreeSet<usize> = topics.iter().flat_map(|t| t.iter().take(top_n).copied()).collect();
    let words = 64;
    let blocks = docs.len().div_ceil(words);
    let mut bits: std::collections::HashMap<usize, Vec<u64>> = needed.iter().map(|&w| (w, vec![0u64; blocks])).collect();
    for (pos, &d) in docs.iter().enumerate() {
        for &(w, _) in corpus.docs()[d].entries() {
            if let Some(b) = bits.get_mut(&(w as usize)) {
                b[pos / words] |= 1 << (pos % words);
            }
        }
    }
    let df = |w: usize| -> u64 { bits.get(&w).map_or(0, |b| b.iter().map(|x| x.count_ones() as u64).sum()) };
    let joint = |a: usize, b: usize| -> u64 {
        match (bits.get(&a), bits.get(&b)) {
            (Some(x), Some(y)) => x.iter().zip(y).map(|(p, q)| (p & q).count_ones() as u64).sum(),
            _ => 0,
        }
    };
    let mut per_topic = Vec::with_capacity(topics.len());
    let mut skipped = 0;
    for t in topics {
        let top: Vec<usize> = t.iter().take(top_n).copied().filter(|&w| w < v).collect();
        let mut sum = 0.0;
        let mut count = 0usize;
        for a in 0..top.len() {
            for b in a + 1..top.len() {
                let (da, db) = (df(top[a]), df(top[b]));
                if da == 0 || db == 0 {
                    skipped += 1;
                    continue;
                }
                sum += npmi(da, db, joint(top[a], top[b]), n_docs);
                count += 1;
            }
        }
        if count > 0 {
            per_topic.push(sum / count as f64);
        }
    }
    if skipped > 0 {
        log::warn!("NPMI: skipped {skipped} word pair(s) absent from the reference documents");
    }
    let mean = if per_topic.is_empty() {
        0.0
    } else {
        per_topic.iter().sum::<f64>() / per_topic.len() as f64
    };
    Coherence {
        mean,
        per_topic,
        skipped_pairs: skipped,
    }
}

/// Share of unique words among the first `top_n` words of every topic.
pub fn topic_diversity(topics: &[Vec<usize>], top_n: usize) -> f64 {
    let mut seen = std::collections::HashSet::new();
    let mut total = 0usize;
    for t in topics {
        for &w in t.iter().take(top_n) {
            seen.insert(w);
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    seen.len() as f64 / total as f64
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // one square root keeps identical vectors at exactly 1
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Mean over topics of the mean pairwise cosine among the first `top_n` words.
pub fn word_embedding_coherence(topics: &[Vec<usize>], vectors: &WordVectors, top_n: usize) -> f64 {
    let mut missing = 0usize;
    let mut scores = Vec::new();
    for t in topics {
        let vs: Vec<&[f64]> = t
            .iter()
            .take(top_n)
            .filter_map(|&w| {
                let v = vectors.get(w);
                if v.is_none() {
                    missing += 1;
                }
                v
            })
            .collect();
        let mut sum = 0.0;
        let mut n = 0usize;
        for a in 0..vs.len() {
            for b in a + 1..vs.len() {
                sum += cosine(vs[a], vs[b]);
                n += 1;
            }
        }
        if n > 0 {
            scores.push(sum / n as f64);
        }
    }
    if missing > 0 {
        log::warn!("WE: skipped {missing} word(s) without an embedding");
    }
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

#[derive(Debug, Default)]
pub struct Npmi;

impl TopicMetric for Npmi {
    fn name(&self) -> &'static str {
        "tc"
    }
    fn compute(&self, input: &MetricInput<'_>) -> Result<f64, EvalError> {
        Ok(topic_coherence_npmi(input.topics, input.corpus, input.reference_docs, 10).mean)
    }
}

#[derive(Debug, Default)]
pub struct Diversity;

impl TopicMetric for Diversity {
    fn name(&self) -> &'static str {
        "td"
    }
    fn compute(&self, input: &MetricInput<'_>) -> Result<f64, EvalError> {
        Ok(topic_diversity(input.topics, 25))
    }
}

#[derive(Debug, Default)]
pub struct EmbeddingCoherence;

impl TopicMetric for EmbeddingCoherence {
    fn name(&self) -> &'static str {
        "we"
    }
    fn compute(&self, input: &MetricInput<'_>) -> Result<f64, EvalError> {
        let v = input.vectors.ok_or(EvalError::Usage("the `we` metric needs word vectors".into()))?;
        Ok(word_embedding_coherence(input.topics, v, 10))
    }
}

/// Metrics addressable by name.
#[derive(Debug, Clone)]
pub struct MetricRegistry {
    entries: Vec<Arc<dyn TopicMetric>>,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        let mut r = Self { entries: Vec::new() };
        r.register(Arc::new(Npmi));
        r.register(Arc::new(Diversity));
        r.register(Arc::new(EmbeddingCoherence));
        r
    }
}

impl MetricRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn register(&mut self, metric: Arc<dyn TopicMetric>) {
        self.entries.retain(|m| m.name() != metric.name());
        self.entries.push(metric);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn TopicMetric>, EvalError> {
        self.entries
            .iter()
            .find(|m| m.name() == name)
            .cloned()
            .ok_or_else(|| EvalError::Usage(format!("unknown metric `{name}` (known: {})", self.names().join(", "))))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|m| m.name()).collect()
    }
}
