//! Objective assembly, the training loop, and structure revision.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::checkpoint::{Checkpoint, CheckpointError};
use crate::model::{edge_log_probs, poisson_log_lik, Forward, ModelError, Sampling, StrategyRegistry, TopicModel, PARAM_EDGE};
use crate::numerics::{seeded_rng, AdamW, AdamWConfig, NumericsError, ParamStore, Rng64, Tape, Tensor, Var};
use crate::taxonomy::{parse_tree, write_tree, GraphMatrices, TaxonomyError, TopicTree};

pub use config::{TrainConfig, CONFIG_KEYS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
}

impl From<NumericsError> for TrainError {
    fn from(e: NumericsError) -> Self {
        Self::Model(e.into())
    }
}

/// Values of the objective's terms for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboParts {
    /// Poisson log-likelihood summed over the batch.
    pub rec: f64,
    /// Unweighted Bernoulli structure log-likelihood.
    pub graph_ll: f64,
    pub beta: f64,
    /// Per-layer KL summed over the batch; entry `l − 1` is layer `l`.
    pub kl: Vec<f64>,
    /// `rec + β·graph_ll − Σ kl`, as computed on the tape.
    pub total: f64,
    pub batch: usize,
}

impl ElboParts {
    pub fn kl_total(&self) -> f64 {
        self.kl.iter().sum()
    }

    pub fn nll_per_doc(&self) -> f64 {
        -self.rec / self.batch as f64
    }

    pub fn is_finite(&self) -> bool {
        self.rec.is_finite() && self.graph_ll.is_finite() && self.total.is_finite() && self.kl.iter().all(|k| k.is_finite())
    }

    pub fn describe(&self) -> String {
        format!(
            "rec={} graph_ll={} beta={} kl={:?} total={}",
            self.rec, self.graph_ll, self.beta, self.kl, self.total
        )
    }
}

/// `Σ_j log p(x_j | Φ⁽¹⁾, θ_j⁽¹⁾) + β·(S, C log-likelihood) − Σ_j Σ_l KL_jl`.
/// The structure term enters once per batch.
pub fn elbo(
    model: &TopicModel,
    tape: &mut Tape,
    fwd: &Forward,
    graph: &GraphMatrices,
    beta: f64,
) -> Result<(Var, ElboParts), ModelError> {
    let rec = poisson_log_lik(tape, fwd.x, fwd.phi[0], fwd.state.theta[0])?;
    let g = edge_log_probs(
        tape,
        fwd.embeddings,
        fwd.params.var(PARAM_EDGE),
        &model.dims.layer_sizes,
        &graph.s,
        &graph.c,
    )?;
    let kls = model.kl_terms(tape, fwd)?;
    let weighted = tape.scale(g, beta)?;
    let mut total = tape.add(rec, weighted)?;
    for &k in &kls {
        total = tape.sub(total, k)?;
    }
    let parts = ElboParts {
        rec: tape.value(rec).item(),
        graph_ll: tape.value(g).item(),
        beta,
        kl: kls.iter().map(|&k| tape.value(k).item()).collect(),
        total: tape.value(total).item(),
        batch: tape.value(fwd.x).rows(),
    };
    Ok((total, parts))
}

/// Objective terms and `∂(−ELBO)/∂param` for every parameter, in store order,
/// with the Weibull noise fixed by `uniforms`.
pub fn loss_gradients(
    model: &TopicModel,
    counts: &Tensor,
    graph: &GraphMatrices,
    uniforms: &[Tensor],
    beta: f64,
) -> Result<(ElboParts, Vec<Tensor>), ModelError> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, counts, graph, Sampling::Draw(uniforms))?;
    let (total, parts) = elbo(model, &mut tape, &fwd, graph, beta)?;
    let loss = tape.neg(total)?;
    let mut grads = tape.backward(loss)?;
    let g = fwd.params.vars().iter().map(|&v| grads.take(v)).collect();
    Ok((parts, g))
}

/// Objective terms only, with the Weibull noise fixed by `uniforms`.
pub fn evaluate_elbo(
    model: &TopicModel,
    counts: &Tensor,
    graph: &GraphMatrices,
    uniforms: &[Tensor],
    beta: f64,
) -> Result<ElboParts, ModelError> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, counts, graph, Sampling::Draw(uniforms))?;
    Ok(elbo(model, &mut tape, &fwd, graph, beta)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    /// Parent–child edge between adjacent layers.
    Structure,
    /// Topic–concept-word link.
    Concept,
}

impl EdgeKind {
    pub fn tag(self) -> &'static str {
        match self {
            EdgeKind::Structure => "S",
            EdgeKind::Concept => "C",
        }
    }
}

/// One entry of `S⁽ˡ⁾` or `C⁽ˡ⁾`, in global node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StructureEdge {
    pub kind: EdgeKind,
    /// Topic layer `l` of the column node.
    pub layer: usize,
    /// Layer-`l` topic.
    pub topic: usize,
    /// Child (layer `l − 1`) for `S`, vocabulary word for `C`.
    pub node: usize,
}

/// Edges changed by one anneal event.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Revision {
    pub iteration: usize,
    pub added: Vec<StructureEdge>,
    pub removed: Vec<StructureEdge>,
}

/// Binarize the sub-blocks of `a_rev` at `threshold` and union the result
/// with the prior structure. Returns the revised `(S, C)`.
pub fn anneal_update(a_rev: &Tensor, prior: &GraphMatrices, threshold: f64) -> (Vec<Tensor>, Vec<Tensor>) {
    let bin = |block: Tensor, prior: &Tensor| block.zip_map(prior, |x, p| if x > threshold || p == 1.0 { 1.0 } else { 0.0 });
    let depth = prior.depth();
    let s = (1..=depth).map(|l| bin(prior.block(a_rev, l - 1, l), &prior.s[l - 1])).collect();
    let c = (1..=depth).map(|l| bin(prior.block(a_rev, 0, l), &prior.c[l - 1])).collect();
    (s, c)
}

/// Every nonzero entry of the current `S` and `C` matrices.
pub fn structure_edges(graph: &GraphMatrices) -> Vec<StructureEdge> {
    let mut out = Vec::new();
    for l in 1..=graph.depth() {
        let (lo, top) = (graph.offset(l - 1), graph.offset(l));
        for (kind, m, row_off) in [(EdgeKind::Structure, &graph.s[l - 1], lo), (EdgeKind::Concept, &graph.c[l - 1], 0)] {
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    if m.get(i, j) == 1.0 {
                        out.push(StructureEdge {
                            kind,
                            layer: l,
                            topic: top + j,
                            node: row_off + i,
                        });
                    }
                }
            }
        }
    }
    out
}

fn diff(old: &GraphMatrices, new: &GraphMatrices, iteration: usize) -> Revision {
    let a: std::collections::BTreeSet<_> = structure_edges(old).into_iter().collect();
    let b: std::collections::BTreeSet<_> = structure_edges(new).into_iter().collect();
    Revision {
        iteration,
        added: b.difference(&a).copied().collect(),
        removed: a.difference(&b).copied().collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Per-document negative Poisson log-likelihood.
    pub nll: f64,
    pub graph_ll: f64,
    /// Per-document KL.
    pub kl: f64,
    pub elbo: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    pub revisions: Vec<Revision>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "iteration,nll,graph_ll,kl,elbo,wall_ms";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{},{:.3}", r.iteration, r.nll, r.graph_ll, r.kl, r.elbo, r.wall_ms);
        }
        out
    }

    pub fn revisions_csv(&self) -> String {
        let mut out = String::from("iteration,change,kind,layer,topic,node\n");
        for rev in &self.revisions {
            for (change, edges) in [("added", &rev.added), ("removed", &rev.removed)] {
                for e in edges {
                    let _ = writeln!(out, "{},{change},{},{},{},{}", rev.iteration, e.kind.tag(), e.layer, e.topic, e.node);
                }
            }
        }
        out
    }

    /// Mean NLL over the records whose iteration lies in `range`.
    pub fn mean_nll(&self, range: std::ops::RangeInclusive<usize>) -> Option<f64> {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| range.contains(&r.iteration))
            .map(|r| r.nll)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn sampling_rng(seed: u64) -> Rng64 {
    seeded_rng(seed ^ 0x9E37_79B9_7F4A_7C15)
}

fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(epoch)
}

/// Owns a model and everything needed to keep optimizing it.
#[derive(Debug)]
pub struct Trainer {
    pub model: TopicModel,
    pub config: TrainConfig,
    pub tree: TopicTree,
    prior: GraphMatrices,
    /// Prior normalized adjacency with the current (possibly revised) `S`, `C`.
    pub graph: GraphMatrices,
    optimizer: AdamW,
    rng: Rng64,
    iteration: usize,
    start: Instant,
    pub report: TrainReport,
    checkpoint_path: Option<PathBuf>,
}

impl Trainer {
    pub fn new(tree: TopicTree, config: TrainConfig, registry: &StrategyRegistry) -> Result<Self, TrainError> {
        config.validate()?;
        let sizes = tree.layer_sizes();
        if let Some(layers) = &config.layers {
            if *layers != sizes[1..] && *layers != sizes[..] {
                return Err(TrainError::Invalid(format!(
                    "configured layers {layers:?} do not match the tree's topic layers {:?}",
                    &sizes[1..]
                )));
            }
        }
        let strategy = registry.get(&config.mode)?;
        let model = TopicModel::new(
            config.dims(sizes),
            config.priors(),
            config.clamps(),
            strategy,
            &mut seeded_rng(config.seed),
        )?;
        let prior = GraphMatrices::from_tree(&tree);
        Ok(Self::assemble(model, config, tree, prior.clone(), prior, 0))
    }

    fn assemble(
        model: TopicModel,
        config: TrainConfig,
        tree: TopicTree,
        prior: GraphMatrices,
        graph: GraphMatrices,
        iteration: usize,
    ) -> Self {
        let optimizer = AdamW::new(AdamWConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        });
        let rng = sampling_rng(config.seed.wrapping_add(iteration as u64));
        Self {
            model,
            config,
            tree,
            prior,
            graph,
            optimizer,
            rng,
            iteration,
            start: Instant::now(),
            report: TrainReport::default(),
            checkpoint_path: None,
        }
    }

    /// Write a checkpoint here every `checkpoint_every` iterations and at the end of [`Trainer::fit`].
    pub fn with_checkpoint_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn prior(&self) -> &GraphMatrices {
        &self.prior
    }

    /// Re-binarize the structure from the current revised adjacency.
    pub fn anneal(&mut self) -> Result<Revision, TrainError> {
        let a_rev = self.model.effective_adjacency(&self.graph)?;
        let (s, c) = anneal_update(&a_rev, &self.prior, self.config.threshold);
        let mut next = self.graph.clone();
        next.s = s;
        next.c = c;
        let rev = diff(&self.graph, &next, self.iteration);
        if !rev.added.is_empty() || !rev.removed.is_empty() {
            log::info!(
                "iteration {}: structure revision +{} -{} edges",
                self.iteration,
                rev.added.len(),
                rev.removed.len()
            );
        }
        self.graph = next;
        Ok(rev)
    }

    /// One optimizer step on a dense batch.
    pub fn step(&mut self, counts: &Tensor) -> Result<ElboParts, TrainError> {
        let next = self.iteration + 1;
        if self.model.strategy().revises_structure() && next % self.config.anneal_period == 0 {
            let mut rev = self.anneal()?;
            rev.iteration = next;
            self.report.revisions.push(rev);
        }
        let uniforms = self.model.draw_uniforms(&mut self.rng, counts.rows());
        let (parts, grads) = loss_gradients(&self.model, counts, &self.graph, &uniforms, self.config.beta)?;
        if !parts.is_finite() {
            return Err(TrainError::Diverged {
                iteration: next,
                detail: parts.describe(),
            });
        }
        self.optimizer
            .step(&mut self.model.params, &grads)
            .map_err(|e| TrainError::Diverged {
                iteration: next,
                detail: format!("{e}; {}", parts.describe()),
            })?;
        self.iteration = next;
        if next % self.config.log_every == 0 {
            let b = parts.batch as f64;
            self.report.records.push(TrainRecord {
                iteration: next,
                nll: parts.nll_per_doc(),
                graph_ll: parts.graph_ll,
                kl: parts.kl_total() / b,
                elbo: parts.total,
                wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
            });
            log::debug!("iteration {next}: {}", parts.describe());
        }
        if let Some(path) = &self.checkpoint_path {
            if self.config.checkpoint_every > 0 && next % self.config.checkpoint_every == 0 {
                self.checkpoint().save(path)?;
            }
        }
        Ok(parts)
    }

    /// Run the configured number of iterations (or epochs) over the training split.
    pub fn fit(&mut self, corpus: &Corpus) -> Result<(), TrainError> {
        if corpus.vocab() != self.tree.vocab().as_slice() {
            return Err(TrainError::Invalid(
                "corpus vocabulary differs from the tree's layer-0 words".into(),
            ));
        }
        if corpus.train_ids().is_empty() {
            return Err(TrainError::Invalid("training split is empty".into()));
        }
        let per_epoch = corpus.train_ids().len().div_ceil(self.config.batch_size);
        let target = self.config.iterations.unwrap_or(self.config.epochs * per_epoch);
        let mut epoch = (self.iteration / per_epoch) as u64;
        let mut skip = self.iteration % per_epoch;
        while self.iteration < target {
            for batch in corpus.batches(self.config.batch_size, epoch_seed(self.config.seed, epoch)).skip(skip) {
                if self.iteration >= target {
                    break;
                }
                self.step(&batch.counts)?;
            }
            skip = 0;
            epoch += 1;
        }
        if let Some(path) = &self.checkpoint_path {
            self.checkpoint().save(path)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut manifest = self.config.to_pairs();
        manifest.push(("iteration".into(), self.iteration.to_string()));
        let mut arrays: Vec<(String, Tensor)> = self.model.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        for l in 1..=self.graph.depth() {
            arrays.push((format!("structure.S{l}"), self.graph.s[l - 1].clone()));
            arrays.push((format!("structure.C{l}"), self.graph.c[l - 1].clone()));
        }
        Checkpoint {
            manifest,
            tree: write_tree(&self.tree),
            arrays,
        }
    }

    /// Rebuild a trainer from a checkpoint. Optimizer moments are not stored
    /// and restart from zero.
    pub fn from_checkpoint(ckpt: &Checkpoint, registry: &StrategyRegistry) -> Result<Self, TrainError> {
        let config = TrainConfig::from_pairs(ckpt.manifest.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .map_err(TrainError::Invalid)?;
        let iteration: usize = ckpt
            .require("iteration")?
            .parse()
            .map_err(|_| CheckpointError::Corrupt("bad iteration".into()))?;
        let tree = parse_tree(&ckpt.tree)?;
        let prior = GraphMatrices::from_tree(&tree);
        let mut graph = prior.clone();
        let mut params = ParamStore::new();
        for (name, t) in &ckpt.arrays {
            if !name.starts_with("structure.") {
                params.insert(name.clone(), t.clone());
            }
        }
        for l in 1..=graph.depth() {
            for (key, slot) in [("S", &mut graph.s[l - 1]), ("C", &mut graph.c[l - 1])] {
                let name = format!("structure.{key}{l}");
                let t = ckpt.array(&name).ok_or(CheckpointError::MissingArray(name))?;
                if t.shape() != slot.shape() {
                    return Err(CheckpointError::Corrupt(format!("structure.{key}{l} has shape {:?}", t.shape())).into());
                }
                *slot = t.clone();
            }
        }
        let model = TopicModel::from_params(
            config.dims(tree.layer_sizes()),
            config.priors(),
            config.clamps(),
            registry.get(&config.mode)?,
            params,
        )?;
        Ok(Self::assemble(model, config, tree, prior, graph, iteration))
    }
}

/// Result of a complete training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: TopicModel,
    pub report: TrainReport,
    pub tree: TopicTree,
    pub graph: GraphMatrices,
    pub checkpoint: Checkpoint,
}

/// Train from scratch with the built-in graph strategies.
pub fn train(corpus: &Corpus, tree: &TopicTree, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(corpus, tree, config, &StrategyRegistry::default(), None)
}

pub fn train_with(
    corpus: &Corpus,
    tree: &TopicTree,
    config: &TrainConfig,
    registry: &StrategyRegistry,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    let mut t = Trainer::new(tree.clone(), config.clone(), registry)?;
    if let Some(p) = checkpoint_path {
        t = t.with_checkpoint_path(p);
    }
    t.fit(corpus)?;
    let checkpoint = t.checkpoint();
    Ok(TrainOutcome {
        model: t.model,
        report: t.report,
        tree: t.tree,
        graph: t.graph,
        checkpoint,
    })
}
