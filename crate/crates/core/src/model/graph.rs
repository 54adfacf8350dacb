//! Graph strategies: how the adjacency fed to the graph convolution is formed.
//!
//! `topickg` uses the normalized prior adjacency as is. `topickga` learns
//! adaptive node embeddings and adds their row-softmaxed cosine kernel to it,
//! and lets the trainer revise the prior structure periodically.

use std::fmt;
use std::sync::Arc;

use crate::numerics::{normal_tensor, BoundParams, NumericsError, ParamStore, Rng64, Tape, Var};
use crate::taxonomy::{adaptive_adjacency, revise_adjacency};

use super::{ModelDims, ModelError, PARAM_ADAPTIVE};

/// Adjacency handles for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct GraphView {
    /// Matrix consumed by the graph convolution.
    pub effective: Var,
    /// The learned adaptive matrix, when the strategy has one.
    pub adaptive: Option<Var>,
}

pub trait GraphStrategy: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Add any strategy-specific parameters.
    fn init_params(&self, dims: &ModelDims, params: &mut ParamStore, rng: &mut Rng64);

    fn adjacency(&self, tape: &mut Tape, normalized: Var, params: &BoundParams) -> Result<GraphView, NumericsError>;

    /// Whether the trainer should run periodic structure updates.
    fn revises_structure(&self) -> bool;
}

/// Fixed prior graph.
#[derive(Debug, Default)]
pub struct StaticGraph;

impl GraphStrategy for StaticGraph {
    fn name(&self) -> &'static str {
        "topickg"
    }

    fn init_params(&self, _dims: &ModelDims, _params: &mut ParamStore, _rng: &mut Rng64) {}

    fn adjacency(&self, _tape: &mut Tape, normalized: Var, _params: &BoundParams) -> Result<GraphView, NumericsError> {
        Ok(GraphView {
            effective: normalized,
            adaptive: None,
        })
    }

    fn revises_structure(&self) -> bool {
        false
    }
}

/// Prior graph plus a learned cosine-kernel graph.
#[derive(Debug, Default)]
pub struct AdaptiveGraph;

impl GraphStrategy for AdaptiveGraph {
    fn name(&self) -> &'static str {
        "topickga"
    }

    fn init_params(&self, dims: &ModelDims, params: &mut ParamStore, rng: &mut Rng64) {
        params.insert(
            PARAM_ADAPTIVE,
            normal_tensor(rng, dims.embed_dim, dims.num_nodes(), dims.init_std),
        );
    }

    fn adjacency(&self, tape: &mut Tape, normalized: Var, params: &BoundParams) -> Result<GraphView, NumericsError> {
        let ada = adaptive_adjacency(tape, params.var(PARAM_ADAPTIVE))?;
        let effective = revise_adjacency(tape, normalized, ada)?;
        Ok(GraphView {
            effective,
            adaptive: Some(ada),
        })
    }

    fn revises_structure(&self) -> bool {
        true
    }
}

/// Graph strategies addressable by name.
#[derive(Debug, Clone)]
pub struct StrategyRegistry {
    entries: Vec<Arc<dyn GraphStrategy>>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = Self { entries: Vec::new() };
        r.register(Arc::new(StaticGraph));
        r.register(Arc::new(AdaptiveGraph));
        r
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// Register a strategy, replacing any existing one with the same name.
    pub fn register(&mut self, strategy: Arc<dyn GraphStrategy>) {
        self.entries.retain(|s| s.name() != strategy.name());
        self.entries.push(strategy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn GraphStrategy>, ModelError> {
        self.entries
            .iter()
            .find(|s| s.name() == name)
            .cloned()
            .ok_or_else(|| ModelError::UnknownStrategy {
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|s| s.name()).collect()
    }
}
