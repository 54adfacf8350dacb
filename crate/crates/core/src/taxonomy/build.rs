//! Topic-tree construction from a `child parent` hypernym lexicon.
//!
//! Leaves are the vocabulary words the lexicon knows about. Each leaf walks
//! up its first-listed hypernym chain to the root; the chain is then fitted
//! onto `L` topic layers. Chains longer than `L` keep their lowest `L − 1`
//! ancestors and merge the rest into the root. Shorter chains are aligned to
//! the root and padded underneath by repeating the leaf's direct parent.

use std::collections::{BTreeSet, HashMap, HashSet};

use super::{TaxonomyError, TopicNode, TopicTree};

/// Name of the synthetic root used when the lexicon has several roots.
pub const VIRTUAL_ROOT: &str = "<root>";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    /// `[K_0, …, K_L]`, bottom-up.
    pub layer_sizes: Vec<usize>,
    /// Vocabulary words missing from the lexicon (kept as layer-0 nodes without parents).
    pub excluded_words: Vec<String>,
    /// Number of lexicon terms listing more than one hypernym; only the first is followed.
    pub multi_parent_terms: usize,
    /// Chains that were merged into the root because they exceeded `L`.
    pub collapsed_chains: usize,
    /// Chains shorter than `L` that were padded.
    pub padded_chains: usize,
}

impl BuildReport {
    /// Layer sizes listed top-down, the way hierarchies are usually quoted.
    pub fn top_down_sizes(&self) -> Vec<usize> {
        self.layer_sizes[1..].iter().rev().copied().collect()
    }
}

/// Parse `<child> <parent>` lines; blank lines and `#` comments are skipped.
pub fn parse_lexicon(text: &str) -> Result<Vec<(String, String)>, TaxonomyError> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(c), Some(p), None) => pairs.push((c.to_string(), p.to_string())),
            _ => {
                return Err(TaxonomyError::Parse {
                    line: i + 1,
                    reason: "expected `<child_name> <parent_name>`".into(),
                })
            }
        }
    }
    Ok(pairs)
}

fn find_cycle<'a>(graph: &HashMap<&'a str, Vec<&'a str>>) -> Option<Vec<String>> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: HashMap<&str, u8> = HashMap::new();
    let mut keys: Vec<&str> = graph.keys().copied().collect();
    keys.sort_unstable();
    for &start in &keys {
        if state.get(start).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack: Vec<(&str, usize)> = vec![(start, 0)];
        let mut path: Vec<&str> = vec![start];
        state.insert(start, 1);
        while let Some((node, next)) = stack.last_mut() {
            let succ = graph.get(*node).map(Vec::as_slice).unwrap_or(&[]);
            if *next < succ.len() {
                let s = succ[*next];
                *next += 1;
                match state.get(s).copied().unwrap_or(0) {
                    0 => {
                        state.insert(s, 1);
                        stack.push((s, 0));
                        path.push(s);
                    }
                    1 => {
                        let pos = path.iter().position(|&p| p == s).unwrap_or(0);
                        let mut cycle: Vec<String> = path[pos..].iter().map(|s| s.to_string()).collect();
                        cycle.push(s.to_string());
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                state.insert(*node, 2);
                stack.pop();
                path.pop();
            }
        }
    }
    None
}

/// Concept words for a topic: its definition tokens, else its name split on
/// `_`, `-` and `.`, intersected with the vocabulary.
fn concept_tokens<'a>(name: &'a str, definition: Option<&'a str>) -> Vec<&'a str> {
    match definition {
        Some(d) => d.split_whitespace().collect(),
        None => name
            .split(|c: char| c == '_' || c == '-' || c == '.' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect(),
    }
}

/// Build a tree with `max_layers` topic layers over `vocab`.
///
/// `definitions` optionally maps lexicon term names to definition text used
/// to extract concept words.
pub fn build_tree(
    vocab: &[String],
    pairs: &[(String, String)],
    max_layers: usize,
    definitions: &HashMap<String, String>,
) -> Result<(TopicTree, BuildReport), TaxonomyError> {
    if max_layers == 0 {
        return Err(TaxonomyError::NoLayers);
    }
    let big_l = max_layers;
    let mut graph: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut terms: HashSet<&str> = HashSet::new();
    for (c, p) in pairs {
        let e = graph.entry(c.as_str()).or_default();
        if !e.contains(&p.as_str()) {
            e.push(p.as_str());
        }
        terms.insert(c);
        terms.insert(p);
    }
    if let Some(cycle) = find_cycle(&graph) {
        return Err(TaxonomyError::Cycle(cycle));
    }
    let multi_parent_terms = graph.values().filter(|ps| ps.len() > 1).count();
    let parent_of = |t: &str| graph.get(t).and_then(|ps| ps.first().copied());

    let mut report = BuildReport {
        multi_parent_terms,
        ..Default::default()
    };
    let mut chains: Vec<(usize, Vec<&str>)> = Vec::new();
    for (w, word) in vocab.iter().enumerate() {
        if !terms.contains(word.as_str()) {
            report.excluded_words.push(word.clone());
            continue;
        }
        let mut chain = Vec::new();
        let mut cur = word.as_str();
        while let Some(p) = parent_of(cur) {
            chain.push(p);
            cur = p;
        }
        if chain.is_empty() {
            // the word is itself a lexicon root
            chain.push(word.as_str());
        }
        chains.push((w, chain));
    }
    if chains.is_empty() {
        return Err(TaxonomyError::EmptyIntersection);
    }
    let roots: BTreeSet<&str> = chains.iter().map(|(_, c)| *c.last().unwrap()).collect();
    if roots.len() > 1 {
        for (_, c) in &mut chains {
            c.push(VIRTUAL_ROOT);
        }
    }
    let root_name = if roots.len() > 1 {
        VIRTUAL_ROOT
    } else {
        *roots.iter().next().unwrap()
    };

    // (layer, name) keyed topic nodes and edges between them.
    let mut layer_names: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); big_l + 1];
    let mut word_edges: BTreeSet<(&str, usize)> = BTreeSet::new();
    let mut topic_edges: BTreeSet<(usize, &str, &str)> = BTreeSet::new(); // (child layer, child, parent)
    for (w, chain) in &chains {
        let m = chain.len();
        let mut at = vec![""; big_l + 1];
        if m >= big_l {
            at[1..big_l].copy_from_slice(&chain[..big_l - 1]);
            at[big_l] = root_name;
            if m > big_l {
                report.collapsed_chains += 1;
            }
        } else {
            for i in 0..m {
                at[big_l - m + 1 + i] = chain[i];
            }
            for slot in at.iter_mut().take(big_l - m + 1).skip(1) {
                *slot = chain[0];
            }
            if m < big_l {
                report.padded_chains += 1;
            }
        }
        for l in 1..=big_l {
            layer_names[l].insert(at[l]);
        }
        word_edges.insert((at[1], *w));
        for l in 1..big_l {
            topic_edges.insert((l, at[l], at[l + 1]));
        }
    }

    let mut nodes: Vec<TopicNode> = vocab
        .iter()
        .map(|w| TopicNode {
            name: w.clone(),
            layer: 0,
            definition: None,
        })
        .collect();
    let mut ids: HashMap<(usize, &str), usize> = HashMap::new();
    for (l, names) in layer_names.iter().enumerate().skip(1) {
        for &name in names {
            ids.insert((l, name), nodes.len());
            nodes.push(TopicNode {
                name: name.to_string(),
                layer: l,
                definition: definitions.get(name).cloned(),
            });
        }
    }
    let mut edges = BTreeSet::new();
    for &(name, w) in &word_edges {
        edges.insert((ids[&(1, name)], w));
    }
    for &(l, child, parent) in &topic_edges {
        edges.insert((ids[&(l + 1, parent)], ids[&(l, child)]));
    }
    let word_index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let mut concepts = BTreeSet::new();
    for (id, node) in nodes.iter().enumerate().skip(vocab.len()) {
        for tok in concept_tokens(&node.name, node.definition.as_deref()) {
            if let Some(&w) = word_index.get(tok) {
                concepts.insert((id, w));
            }
        }
    }
    let tree = TopicTree::new(nodes, edges, concepts)?;
    report.layer_sizes = tree.layer_sizes();
    if !report.excluded_words.is_empty() {
        log::info!(
            "{} vocabulary word(s) not found in the lexicon",
            report.excluded_words.len()
        );
    }
    Ok((tree, report))
}
