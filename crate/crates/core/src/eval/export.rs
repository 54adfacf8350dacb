//! Topic-tree exporters.
//!
//! The `text` format is line based and can be read back with [`parse_export`]:
//!
//! ```text
//! NODE <id> <layer> <name>
//! KEYWORDS <id> <word> <word> …
//! EDGE <parent_id> <child_id> <prior|added> <weight>
//! CONCEPT <topic_id> <word_id> <prior|added>
//! ```
//!
//! Edge weights are the `Φ` entries linking child to parent. Word nodes are
//! listed only when some edge or concept link touches them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use crate::numerics::Tensor;
use crate::taxonomy::{GraphMatrices, TopicTree};
use crate::trainer::{structure_edges, EdgeKind};

use super::{top_words, topic_word_matrix, EvalError};

#[derive(Debug, Clone, Copy)]
pub struct ExportInput<'a> {
    pub tree: &'a TopicTree,
    pub prior: &'a GraphMatrices,
    /// Current (possibly revised) structure.
    pub graph: &'a GraphMatrices,
    /// `phi[l − 1]` is `Φ⁽ˡ⁾`.
    pub phi: &'a [Tensor],
    pub top_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Origin {
    Prior,
    Added,
}

impl Origin {
    fn tag(self) -> &'static str {
        match self {
            Origin::Prior => "prior",
            Origin::Added => "added",
        }
    }
}

/// Export contents shared by every format.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExportedTree {
    pub nodes: BTreeMap<usize, (usize, String)>,
    pub keywords: BTreeMap<usize, Vec<String>>,
    pub edges: BTreeMap<(usize, usize), (Origin, f64)>,
    pub concepts: BTreeMap<(usize, usize), Origin>,
}

impl ExportedTree {
    pub fn build(input: &ExportInput<'_>) -> Result<Self, EvalError> {
        let tree = input.tree;
        let g = input.graph;
        let prior: BTreeSet<_> = structure_edges(input.prior).into_iter().collect();
        let mut out = Self::default();
        let vocab = tree.vocab();
        for l in 1..=g.depth() {
            let chain = topic_word_matrix(input.phi, l)?;
            for k in 0..g.layer_sizes[l] {
                let id = g.offset(l) + k;
                out.nodes.insert(id, (l, tree.node(id).name.clone()));
                let words = top_words(&chain, k, input.top_k)?;
                out.keywords.insert(id, words.into_iter().map(|(w, _)| vocab[w].clone()).collect());
            }
        }
        for e in structure_edges(g) {
            let origin = if prior.contains(&e) { Origin::Prior } else { Origin::Added };
            let touch = |out: &mut Self, id: usize| {
                out.nodes.entry(id).or_insert_with(|| (tree.node(id).layer, tree.node(id).name.clone()));
            };
            touch(&mut out, e.node);
            match e.kind {
                EdgeKind::Structure => {
                    let w = input.phi[e.layer - 1].get(e.node - g.offset(e.layer - 1), e.topic - g.offset(e.layer));
                    out.edges.insert((e.topic, e.node), (origin, w));
                }
                EdgeKind::Concept => {
                    out.concepts.insert((e.topic, e.node), origin);
                }
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (id, (layer, name)) in &self.nodes {
            let _ = writeln!(s, "NODE {id} {layer} {name}");
        }
        for (id, kw) in &self.keywords {
            let _ = writeln!(s, "KEYWORDS {id} {}", kw.join(" "));
        }
        for ((p, c), (o, w)) in &self.edges {
            let _ = writeln!(s, "EDGE {p} {c} {} {w:?}", o.tag());
        }
        for ((t, w), o) in &self.concepts {
            let _ = writeln!(s, "CONCEPT {t} {w} {}", o.tag());
        }
        s
    }

    pub fn to_dot(&self) -> String {
        let esc = |t: &str| t.replace('\\', "\\\\").replace('"', "\\\"");
        let mut s = String::from("digraph topics {\n  rankdir=TB;\n  node [shape=box];\n");
        for (id, (layer, name)) in &self.nodes {
            if *layer == 0 {
                continue;
            }
            let kw = self.keywords.get(id).map(|k| k.join(" ")).unwrap_or_default();
            let _ = writeln!(s, "  n{id} [label=\"{}\\n{}\"];", esc(name), esc(&kw));
        }
        for ((p, c), (o, w)) in &self.edges {
            if self.nodes.get(c).is_some_and(|(l, _)| *l == 0) {
                continue;
            }
            let style = if *o == Origin::Added { ", style=dashed" } else { "" };
            let _ = writeln!(s, "  n{p} -> n{c} [label=\"{w:.3}\"{style}];");
        }
        s.push_str("}\n");
        s
    }
}

/// Read back the `text` format.
pub fn parse_export(text: &str) -> Result<ExportedTree, EvalError> {
    let mut out = ExportedTree::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| EvalError::Parse {
            line: i + 1,
            reason: reason.to_string(),
        };
        let num = |s: Option<&str>| -> Result<usize, EvalError> { s.and_then(|v| v.parse().ok()).ok_or_else(|| bad("expected an integer")) };
        let origin = |s: Option<&str>| match s {
            Some("prior") => Ok(Origin::Prior),
            Some("added") => Ok(Origin::Added),
            _ => Err(bad("expected `prior` or `added`")),
        };
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("NODE") => {
                let id = num(parts.next())?;
                let layer = num(parts.next())?;
                let name = parts.collect::<Vec<_>>().join(" ");
                out.nodes.insert(id, (layer, name));
            }
            Some("KEYWORDS") => {
                let id = num(parts.next())?;
                out.keywords.insert(id, parts.map(str::to_string).collect());
            }
            Some("EDGE") => {
                let p = num(parts.next())?;
                let c = num(parts.next())?;
                let o = origin(parts.next())?;
                let w: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("expected a weight"))?;
                out.edges.insert((p, c), (o, w));
            }
            Some("CONCEPT") => {
                let t = num(parts.next())?;
                let w = num(parts.next())?;
                out.concepts.insert((t, w), origin(parts.next())?);
            }
            _ => return Err(bad("unknown record")),
        }
    }
    Ok(out)
}

pub trait TreeExporter: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn export(&self, input: &ExportInput<'_>) -> Result<String, EvalError>;
}

#[derive(Debug, Default)]
pub struct TextExporter;

impl TreeExporter for TextExporter {
    fn name(&self) -> &'static str {
        "text"
    }
    fn export(&self, input: &ExportInput<'_>) -> Result<String, EvalError> {
        Ok(ExportedTree::build(input)?.to_text())
    }
}

#[derive(Debug, Default)]
pub struct DotExporter;

impl TreeExporter for DotExporter {
    fn name(&self) -> &'static str {
        "dot"
    }
    fn export(&self, input: &ExportInput<'_>) -> Result<String, EvalError> {
        Ok(ExportedTree::build(input)?.to_dot())
    }
}

#[derive(Debug, Clone)]
pub struct ExporterRegistry {
    entries: Vec<Arc<dyn TreeExporter>>,
}

impl Default for ExporterRegistry {
    fn default() -> Self {
        let mut r = Self { entries: Vec::new() };
        r.register(Arc::new(TextExporter));
        r.register(Arc::new(DotExporter));
        r
    }
}

impl ExporterRegistry {
    pub fn register(&mut self, e: Arc<dyn TreeExporter>) {
        self.entries.retain(|x| x.name() != e.name());
        self.entries.push(e);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn TreeExporter>, EvalError> {
        self.entries.iter().find(|e| e.name() == name).cloned().ok_or_else(|| {
            EvalError::Usage(format!(
                "unknown export format `{name}` (known: {})",
                self.entries.iter().map(|e| e.name()).collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

/// Export with a registered format.
pub fn export_tree(input: &ExportInput<'_>, format: &str) -> Result<String, EvalError> {
    ExporterRegistry::default().get(format)?.export(input)
}
