//! Line-based tree files:
//!
//! ```text
//! NODE <id> <layer> <name>
//! EDGE <parent_id> <child_id>
//! CONCEPT <topic_id> <word_id>
//! DEF <id> <free text>
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::{TaxonomyError, TopicNode, TopicTree};

pub fn write_tree(tree: &TopicTree) -> String {
    let mut out = String::new();
    for (id, n) in tree.nodes().iter().enumerate() {
        let _ = writeln!(out, "NODE {id} {} {}", n.layer, n.name);
    }
    for &(p, c) in tree.edges() {
        let _ = writeln!(out, "EDGE {p} {c}");
    }
    for &(t, w) in tree.concepts() {
        let _ = writeln!(out, "CONCEPT {t} {w}");
    }
    for (id, n) in tree.nodes().iter().enumerate() {
        if let Some(d) = &n.definition {
            let _ = writeln!(out, "DEF {id} {d}");
        }
    }
    out
}

pub fn read_tree(path: &Path) -> Result<TopicTree, TaxonomyError> {
    let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_tree(&text)
}

pub fn parse_tree(text: &str) -> Result<TopicTree, TaxonomyError> {
    let mut nodes: BTreeMap<usize, (usize, String)> = BTreeMap::new();
    let mut defs: BTreeMap<usize, String> = BTreeMap::new();
    let mut edges = BTreeSet::new();
    let mut concepts = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let err = |reason: String| TaxonomyError::Parse { line: line_no, reason };
        let num = |s: Option<&str>, what: &str| -> Result<usize, TaxonomyError> {
            let s = s.ok_or_else(|| err(format!("missing {what}")))?;
            s.parse().map_err(|_| err(format!("{what} `{s}` is not an integer")))
        };
        let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
        match tag {
            "NODE" => {
                let mut f = rest.splitn(3, ' ');
                let id = num(f.next(), "node id")?;
                let layer = num(f.next(), "layer")?;
                let name = f.next().filter(|n| !n.is_empty()).ok_or_else(|| err("missing node name".into()))?;
                if nodes.insert(id, (layer, name.to_string())).is_some() {
                    return Err(err(format!("duplicate node id {id}")));
                }
            }
            "EDGE" | "CONCEPT" => {
                let mut f = rest.split_whitespace();
                let a = num(f.next(), "source id")?;
                let b = num(f.next(), "target id")?;
                if f.next().is_some() {
                    return Err(err("trailing fields".into()));
                }
                if tag == "EDGE" {
                    edges.insert((a, b));
                } else {
                    concepts.insert((a, b));
                }
            }
            "DEF" => {
                let (id, text) = rest.split_once(' ').unwrap_or((rest, ""));
                let id = num(Some(id), "node id")?;
                defs.insert(id, text.to_string());
            }
            other => return Err(err(format!("unknown record `{other}`"))),
        }
    }
    let n = nodes.len();
    if nodes.keys().copied().ne(0..n) {
        return Err(TaxonomyError::Invalid("node ids must be contiguous from 0".into()));
    }
    if let Some(&bad) = defs.keys().find(|&&id| id >= n) {
        return Err(TaxonomyError::Invalid(format!("definition for unknown node {bad}")));
    }
    let nodes = nodes
        .into_iter()
        .map(|(id, (layer, name))| TopicNode {
            name,
            layer,
            definition: defs.remove(&id),
        })
        .collect();
    TopicTree::new(nodes, edges, concepts)
}
