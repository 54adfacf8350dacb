//! The prior topic tree and the matrices derived from it.
//!
//! Nodes are globally ordered layer by layer: the vocabulary (layer 0)
//! first, then layer 1 topics, and so on up to the root layer `L`. Every
//! matrix in the crate indexes nodes in this order.

mod build;
mod format;
mod matrices;

use std::collections::BTreeSet;

use thiserror::Error;

pub use build::{build_tree, parse_lexicon, BuildReport};
pub use format::{parse_tree, read_tree, write_tree};
pub use matrices::{adaptive_adjacency, adaptive_adjacency_values, revise_adjacency, GraphMatrices};

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("cyclic hypernym relation: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("no vocabulary word appears in the hypernym lexicon")]
    EmptyIntersection,
    #[error("max_layers must be at least 1")]
    NoLayers,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid tree: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicNode {
    pub name: String,
    pub layer: usize,
    pub definition: Option<String>,
}

/// Layered topic tree. Layer 0 holds the `V` vocabulary words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicTree {
    nodes: Vec<TopicNode>,
    /// `offsets[l]..offsets[l + 1]` are the global ids of layer `l`.
    offsets: Vec<usize>,
    /// `(parent_id, child_id)` with the child exactly one layer below.
    edges: BTreeSet<(usize, usize)>,
    /// `(topic_id, word_id)`.
    concepts: BTreeSet<(usize, usize)>,
}

impl TopicTree {
    /// Validate and assemble a tree. `nodes` must be sorted by layer.
    pub fn new(
        nodes: Vec<TopicNode>,
        edges: BTreeSet<(usize, usize)>,
        concepts: BTreeSet<(usize, usize)>,
    ) -> Result<Self, TaxonomyError> {
        if nodes.is_empty() {
            return Err(TaxonomyError::Invalid("tree has no nodes".into()));
        }
        let top = nodes.last().map(|n| n.layer).unwrap_or(0);
        if top == 0 {
            return Err(TaxonomyError::Invalid("tree needs at least one topic layer".into()));
        }
        let mut offsets = vec![0usize; top + 2];
        let mut prev = 0;
        for (i, n) in nodes.iter().enumerate() {
            if n.layer < prev {
                return Err(TaxonomyError::Invalid(format!(
                    "node {i} at layer {} follows a node at layer {prev}; ids must be ordered by layer",
                    n.layer
                )));
            }
            for l in prev + 1..=n.layer {
                offsets[l] = i;
            }
            prev = n.layer;
        }
        offsets[top + 1] = nodes.len();
        for l in 0..=top {
            if offsets[l + 1] <= offsets[l] {
                return Err(TaxonomyError::Invalid(format!("layer {l} is empty")));
            }
        }
        let n = nodes.len();
        for &(p, c) in &edges {
            if p >= n || c >= n {
                return Err(TaxonomyError::Invalid(format!("edge {p} -> {c} references an unknown node")));
            }
            if nodes[p].layer != nodes[c].layer + 1 {
                return Err(TaxonomyError::Invalid(format!(
                    "edge {p} -> {c} does not connect adjacent layers ({} -> {})",
                    nodes[p].layer, nodes[c].layer
                )));
            }
        }
        for &(t, w) in &concepts {
            if t >= n || w >= n || nodes[t].layer == 0 || nodes[w].layer != 0 {
                return Err(TaxonomyError::Invalid(format!(
                    "concept link {t} -> {w} must join a topic node to a layer-0 word"
                )));
            }
        }
        Ok(Self {
            nodes,
            offsets,
            edges,
            concepts,
        })
    }

    /// Number of topic layers `L`.
    pub fn depth(&self) -> usize {
        self.offsets.len() - 2
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.layer_size(0)
    }

    pub fn layer_size(&self, layer: usize) -> usize {
        self.offsets[layer + 1] - self.offsets[layer]
    }

    /// `[K_0, K_1, …, K_L]`, bottom-up.
    pub fn layer_sizes(&self) -> Vec<usize> {
        (0..=self.depth()).map(|l| self.layer_size(l)).collect()
    }

    pub fn layer_range(&self, layer: usize) -> std::ops::Range<usize> {
        self.offsets[layer]..self.offsets[layer + 1]
    }

    pub fn offset(&self, layer: usize) -> usize {
        self.offsets[layer]
    }

    pub fn nodes(&self) -> &[TopicNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TopicNode {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn concepts(&self) -> &BTreeSet<(usize, usize)> {
        &self.concepts
    }

    pub fn children(&self, parent: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.range((parent, 0)..(parent + 1, 0)).map(|&(_, c)| c)
    }

    pub fn parents(&self, child: usize) -> Vec<usize> {
        self.edges.iter().filter(|&&(_, c)| c == child).map(|&(p, _)| p).collect()
    }

    pub fn concept_words(&self, topic: usize) -> impl Iterator<Item = usize> + '_ {
        self.concepts.range((topic, 0)..(topic + 1, 0)).map(|&(_, w)| w)
    }

    pub fn vocab(&self) -> Vec<String> {
        self.nodes[self.layer_range(0)].iter().map(|n| n.name.clone()).collect()
    }

    /// Check the root layer holds exactly `roots` nodes.
    pub fn expect_roots(&self, roots: usize) -> Result<(), TaxonomyError> {
        let got = self.layer_size(self.depth());
        if got != roots {
            return Err(TaxonomyError::Invalid(format!(
                "root layer has {got} node(s), expected {roots}"
            )));
        }
        Ok(())
    }

    /// A copy with every node definition replaced.
    pub fn with_definitions(mut self, defs: impl Fn(&TopicNode) -> Option<String>) -> Self {
        for n in &mut self.nodes {
            n.definition = defs(n);
        }
        self
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// words: a b c d; layer 1: t0 {a,b}, t1 {c,d}; root r.
    pub(crate) fn small_tree() -> TopicTree {
        let mut nodes: Vec<TopicNode> = ["a", "b", "c", "d"]
            .iter()
            .map(|w| TopicNode {
                name: w.to_string(),
                layer: 0,
                definition: None,
            })
            .collect();
        for (name, layer) in [("t0", 1), ("t1", 1), ("r", 2)] {
            nodes.push(TopicNode {
                name: name.into(),
                layer,
                definition: None,
            });
        }
        let edges = [(4, 0), (4, 1), (5, 2), (5, 3), (6, 4), (6, 5)].into_iter().collect();
        let concepts = [(4, 0), (5, 3), (6, 1)].into_iter().collect();
        TopicTree::new(nodes, edges, concepts).unwrap()
    }

    #[test]
    fn layer_bookkeeping() {
        let t = small_tree();
        assert_eq!(t.depth(), 2);
        assert_eq!(t.layer_sizes(), vec![4, 2, 1]);
        assert_eq!(t.layer_range(1), 4..6);
        assert_eq!(t.children(4).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(t.parents(4), vec![6]);
        t.expect_roots(1).unwrap();
        assert!(t.expect_roots(2).is_err());
    }

    #[test]
    fn rejects_edges_skipping_layers() {
        let t = small_tree();
        let mut edges = t.edges().clone();
        edges.insert((6, 0));
        let err = TopicTree::new(t.nodes().to_vec(), edges, t.concepts().clone()).unwrap_err();
        assert!(matches!(err, TaxonomyError::Invalid(_)));
    }
}
