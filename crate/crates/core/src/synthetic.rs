//! Corpora drawn from a planted topic tree, for recovery experiments and tests.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::corpus::{Corpus, Document};
use crate::numerics::seeded_rng;
use crate::taxonomy::{TopicNode, TopicTree};

/// Shape of the planted tree and of the documents drawn from it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    /// Number of leaf topics under each layer-2 group.
    pub groups: Vec<usize>,
    pub words_per_topic: usize,
    /// Leaf topics attached to group 0 whose words have no parent in the prior tree.
    pub free_topics: usize,
    /// Concept links from each leaf topic to its first words (all of them by default).
    pub concepts_per_topic: usize,
    /// Background words shared by every topic.
    pub background_words: usize,
    pub docs: usize,
    pub doc_len: (usize, usize),
    /// Leaf topics mixed in each document (the first one is dominant).
    pub topics_per_doc: usize,
    /// Dirichlet concentration of the mixture weights.
    pub concentration: f64,
    /// Probability that a token is drawn uniformly from the whole vocabulary.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            groups: vec![3, 3],
            words_per_topic: 10,
            free_topics: 0,
            concepts_per_topic: 10,
            background_words: 0,
            docs: 500,
            doc_len: (20, 40),
            topics_per_doc: 2,
            concentration: 1.0,
            noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    /// Documents labelled by their dominant leaf topic.
    pub corpus: Corpus,
    /// The prior tree: planted topics with their words, free topics without children.
    pub tree: TopicTree,
    /// Word ids of every leaf topic, planted first, then free.
    pub topic_words: Vec<Vec<usize>>,
    /// Global node id of every leaf topic, in the same order.
    pub topic_nodes: Vec<usize>,
    /// Global node ids of the free topics.
    pub free_nodes: Vec<usize>,
}

pub fn generate(cfg: &PlantedConfig) -> Planted {
    assert!(!cfg.groups.is_empty() && cfg.words_per_topic > 0 && cfg.docs > 0);
    assert!(cfg.doc_len.0 >= 1 && cfg.doc_len.0 <= cfg.doc_len.1);
    let planted: usize = cfg.groups.iter().sum();
    let n_topics = planted + cfg.free_topics;
    let mut group_of: Vec<usize> = cfg.groups.iter().enumerate().flat_map(|(g, &n)| std::iter::repeat_n(g, n)).collect();
    group_of.extend(std::iter::repeat_n(0, cfg.free_topics));

    let mut vocab = Vec::new();
    let mut topic_words = Vec::with_capacity(n_topics);
    for t in 0..n_topics {
        let prefix = if t < planted { format!("t{t}") } else { format!("f{}", t - planted) };
        topic_words.push((0..cfg.words_per_topic).map(|i| vocab.len() + i).collect::<Vec<_>>());
        vocab.extend((0..cfg.words_per_topic).map(|i| format!("{prefix}w{i}")));
    }
    let background: Vec<usize> = (0..cfg.background_words).map(|i| vocab.len() + i).collect();
    vocab.extend((0..cfg.background_words).map(|i| format!("bg{i}")));
    let v = vocab.len();

    let mut nodes: Vec<TopicNode> = vocab
        .iter()
        .map(|w| TopicNode {
            name: w.clone(),
            layer: 0,
            definition: None,
        })
        .collect();
    let topic_nodes: Vec<usize> = (0..n_topics).map(|t| v + t).collect();
    for t in 0..n_topics {
        let name = if t < planted { format!("topic{t}") } else { format!("free{}", t - planted) };
        nodes.push(TopicNode {
            name,
            layer: 1,
            definition: None,
        });
    }
    let group_base = v + n_topics;
    for g in 0..cfg.groups.len() {
        nodes.push(TopicNode {
            name: format!("group{g}"),
            layer: 2,
            definition: None,
        });
    }
    let mut edges = BTreeSet::new();
    let mut concepts = BTreeSet::new();
    for t in 0..n_topics {
        edges.insert((group_base + group_of[t], topic_nodes[t]));
        if t < planted {
            for &w in &topic_words[t] {
                edges.insert((topic_nodes[t], w));
            }
            for &w in topic_words[t].iter().take(cfg.concepts_per_topic) {
                concepts.insert((topic_nodes[t], w));
            }
        }
    }
    let tree = TopicTree::new(nodes, edges, concepts).expect("planted tree is well formed");

    let mut rng = seeded_rng(cfg.seed);
    let gamma = Gamma::new(cfg.concentration, 1.0).expect("positive concentration");
    let all_topics: Vec<usize> = (0..n_topics).collect();
    let mut docs = Vec::with_capacity(cfg.docs);
    let mut labels = Vec::with_capacity(cfg.docs);
    for j in 0..cfg.docs {
        let dominant = j % n_topics;
        let mut mix = vec![dominant];
        let k = cfg.topics_per_doc.clamp(1, n_topics);
        while mix.len() < k {
            let t = *all_topics.choose(&mut rng).expect("non-empty");
            if !mix.contains(&t) {
                mix.push(t);
            }
        }
        let mut w: Vec<f64> = mix.iter().map(|_| gamma.sample(&mut rng)).collect();
        // keep the label topic dominant
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        w[0] = max * 1.5 + 1e-12;
        let total: f64 = w.iter().sum();
        let len = rng.random_range(cfg.doc_len.0..=cfg.doc_len.1);
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for _ in 0..len {
            let word = if rng.random::<f64>() < cfg.noise {
                rng.random_range(0..v)
            } else {
                let mut r = rng.random::<f64>() * total;
                let mut pick = mix.len() - 1;
                for (i, &wi) in w.iter().enumerate() {
                    if r < wi {
                        pick = i;
                        break;
                    }
                    r -= wi;
                }
                let pool = &topic_words[mix[pick]];
                if !background.is_empty() && rng.random::<f64>() < 0.2 {
                    *background.choose(&mut rng).expect("non-empty")
                } else {
                    *pool.choose(&mut rng).expect("non-empty")
                }
            };
            *counts.entry(word as u32).or_default() += 1;
        }
        docs.push(Document::from_counts(counts));
        labels.push(dominant);
    }
    let corpus = Corpus::new(vocab, docs, Some(labels)).expect("synthetic documents are non-empty");
    Planted {
        corpus,
        tree,
        topic_words,
        free_nodes: topic_nodes[planted..].to_vec(),
        topic_nodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_shapes() {
        let p = generate(&PlantedConfig {
            free_topics: 1,
            docs: 30,
            ..Default::default()
        });
        assert_eq!(p.tree.layer_sizes(), vec![70, 7, 2]);
        assert_eq!(p.corpus.len(), 30);
        assert_eq!(p.free_nodes, vec![76]);
        assert_eq!(p.tree.children(76).count(), 0);
        assert_eq!(p.tree.children(70).count(), 10);
        assert_eq!(p.corpus.vocab(), p.tree.vocab().as_slice());
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let c = PlantedConfig {
            docs: 20,
            ..Default::default()
        };
        assert_eq!(generate(&c).corpus, generate(&c).corpus);
    }
}
