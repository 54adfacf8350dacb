//! Topic extraction, quality metrics, classification, export and sweeps.

mod classify;
mod export;
mod metrics;
mod sweep;

use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::{ModelError, TopicModel, PARAM_EMBED};
use crate::numerics::Tensor;
use crate::taxonomy::GraphMatrices;

pub use classify::{classify_theta, f1_scores, ClassifyResult, LogisticRegression, GD_LEARNING_RATE, GD_STEPS, L2_PENALTY};
pub use export::{
    export_tree, parse_export, DotExporter, ExportInput, ExportedTree, ExporterRegistry, Origin, TextExporter, TreeExporter,
};
pub use metrics::{
    npmi, topic_coherence_npmi, topic_diversity, word_embedding_coherence, Coherence, Diversity, EmbeddingCoherence,
    MetricInput, MetricRegistry, Npmi, TopicMetric, WordVectors, NPMI_EPS,
};
pub use sweep::{sweep, SweepCell, SweepGrid, SweepResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("requested {requested} words from a vocabulary of {vocab}")]
    TooManyWords { requested: usize, vocab: usize },
    #[error("classification needs at least two classes in the training labels")]
    SingleClass,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `Φ⁽¹⁾ Φ⁽²⁾ ⋯ Φ⁽ˡ⁾`: the `V × K_l` word distributions of layer-`l` topics.
pub fn topic_word_matrix(phi: &[Tensor], layer: usize) -> Result<Tensor, EvalError> {
    if layer == 0 || layer > phi.len() {
        return Err(EvalError::Usage(format!("layer {layer} outside 1..={}", phi.len())));
    }
    let mut acc = phi[0].clone();
    for p in &phi[1..layer] {
        acc = Tensor::matmul(&acc, p, false, false).map_err(ModelError::from)?;
    }
    Ok(acc)
}

/// The `n` most probable words of column `topic`, descending, ties to the lower id.
pub fn top_words(chain: &Tensor, topic: usize, n: usize) -> Result<Vec<(usize, f64)>, EvalError> {
    let v = chain.rows();
    if n > v {
        return Err(EvalError::TooManyWords { requested: n, vocab: v });
    }
    let col = chain.column_vec(topic);
    let mut ids: Vec<usize> = (0..v).collect();
    ids.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
    Ok(ids.into_iter().take(n).map(|w| (w, col[w])).collect())
}

/// Ranked word lists for every topic of `layer`.
pub fn layer_topics(phi: &[Tensor], layer: usize, n: usize) -> Result<Vec<Vec<usize>>, EvalError> {
    let chain = topic_word_matrix(phi, layer)?;
    (0..chain.cols())
        .map(|k| Ok(top_words(&chain, k, n)?.into_iter().map(|(w, _)| w).collect()))
        .collect()
}

/// Deterministic `θ⁽¹⁾` rows for the given documents.
pub fn theta_features(model: &TopicModel, graph: &GraphMatrices, corpus: &Corpus, ids: &[usize]) -> Result<Tensor, EvalError> {
    const CHUNK: usize = 256;
    let k1 = model.dims.layer_sizes[1];
    let mut data = Vec::with_capacity(ids.len() * k1);
    for chunk in ids.chunks(CHUNK) {
        let theta = model.infer_theta(&corpus.dense(chunk), graph)?;
        data.extend_from_slice(theta[0].data());
    }
    Ok(Tensor::new(ids.len(), k1, data).map_err(ModelError::from)?)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Topic layers to score; all when `None`.
    pub layers: Option<Vec<usize>>,
    pub metrics: Vec<String>,
    /// External word vectors; the model's layer-0 embeddings otherwise.
    pub vectors: Option<WordVectors>,
    /// NPMI reference documents; the training split otherwise.
    pub reference_docs: Option<Vec<usize>>,
    pub classify: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            layers: None,
            metrics: vec!["tc".into(), "td".into(), "we".into()],
            vectors: None,
            reference_docs: None,
            classify: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMetrics {
    pub layer: usize,
    pub values: Vec<(String, f64)>,
}

impl LayerMetrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub layers: Vec<LayerMetrics>,
    pub classification: Option<ClassifyResult>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "scope,metric,value";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for l in &self.layers {
            for (name, v) in &l.values {
                let _ = writeln!(s, "layer{},{name},{v}", l.layer);
            }
        }
        if let Some(c) = &self.classification {
            let _ = writeln!(s, "classification,micro_f1,{}", c.micro_f1);
            let _ = writeln!(s, "classification,macro_f1,{}", c.macro_f1);
        }
        s
    }

    /// All scalar results as `(scope.metric, value)`.
    pub fn flatten(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .layers
            .iter()
            .flat_map(|l| l.values.iter().map(move |(n, v)| (format!("layer{}.{n}", l.layer), *v)))
            .collect();
        if let Some(c) = &self.classification {
            out.push(("classification.micro_f1".into(), c.micro_f1));
            out.push(("classification.macro_f1".into(), c.macro_f1));
        }
        out
    }
}

/// Score every requested layer and, when labels and a test split exist, classify documents.
pub fn evaluate(model: &TopicModel, graph: &GraphMatrices, corpus: &Corpus, opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    let registry = MetricRegistry::default();
    let metrics = opts.metrics.iter().map(|m| registry.get(m)).collect::<Result<Vec<_>, _>>()?;
    let phi = model.phi_values(graph)?;
    let depth = phi.len();
    let layers = opts.layers.clone().unwrap_or_else(|| (1..=depth).collect());
    let v = corpus.vocab_size();
    let own_vectors;
    let vectors = match &opts.vectors {
        Some(v) => v,
        None => {
            let e = model.params.get(PARAM_EMBED).expect("embedding parameter present");
            own_vectors = WordVectors::from_columns(&e.slice_cols(0, v));
            &own_vectors
        }
    };
    let reference = opts.reference_docs.clone().unwrap_or_else(|| corpus.train_ids());
    let mut out = Vec::new();
    for &l in &layers {
        let topics = layer_topics(&phi, l, 25.min(v))?;
        let input = MetricInput {
            topics: &topics,
            corpus,
            reference_docs: &reference,
            vectors: Some(vectors),
        };
        let values = metrics
            .iter()
            .map(|m| Ok((m.name().to_string(), m.compute(&input)?)))
            .collect::<Result<_, EvalError>>()?;
        out.push(LayerMetrics { layer: l, values });
    }
    let classification = match (opts.classify, corpus.labels()) {
        (true, Some(labels)) if !corpus.test_ids().is_empty() => {
            let (tr, te) = (corpus.train_ids(), corpus.test_ids());
            let xtr = theta_features(model, graph, corpus, &tr)?;
            let xte = theta_features(model, graph, corpus, &te)?;
            let ytr: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
            let yte: Vec<usize> = te.iter().map(|&i| labels[i]).collect();
            Some(classify_theta(&xtr, &ytr, &xte, &yte)?)
        }
        _ => None,
    };
    Ok(EvalReport {
        layers: out,
        classification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_column_ranks_first() {
        let mut phi = Tensor::zeros(10, 2);
        phi.set(7, 0, 1.0);
        for i in 0..10 {
            phi.set(i, 1, 0.1);
        }
        let top = top_words(&phi, 0, 3).unwrap();
        assert_eq!(top[0], (7, 1.0));
        // ties fall back to word order
        assert_eq!(top[1].0, 0);
        let flat = top_words(&phi, 1, 4).unwrap();
        assert_eq!(flat.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(top_words(&phi, 0, 11).is_err());
    }

    #[test]
    fn chain_matches_brute_force() {
        let p1 = Tensor::new(3, 2, vec![0.2, 0.5, 0.3, 0.25, 0.5, 0.25]).unwrap();
        let p2 = Tensor::new(2, 2, vec![0.6, 0.1, 0.4, 0.9]).unwrap();
        let chain = topic_word_matrix(&[p1.clone(), p2.clone()], 2).unwrap();
        for i in 0..3 {
            for k in 0..2 {
                let want: f64 = (0..2).map(|j| p1.get(i, j) * p2.get(j, k)).sum();
                assert!((chain.get(i, k) - want).abs() < 1e-15);
            }
        }
        for k in 0..2 {
            assert!((chain.column_vec(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
