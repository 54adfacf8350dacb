//! The topic model: parameters, graph strategies, and the forward pass.

pub mod checkpoint;
mod graph;
mod network;

use std::sync::Arc;

use thiserror::Error;

use crate::numerics::{normal_tensor, special, uniform_tensor, BoundParams, NumericsError, ParamStore, Rng64, Tape, Tensor, Var};
use crate::taxonomy::GraphMatrices;

pub use graph::{AdaptiveGraph, GraphStrategy, GraphView, StaticGraph, StrategyRegistry};
pub use network::{
    bernoulli_log_lik, compute_phi, edge_log_probs, encode, gcn_forward, layer_embeddings, poisson_log_lik, Sampling,
    VariationalState,
};

/// Node embeddings `E` (`d × N`).
pub const PARAM_EMBED: &str = "embed";
/// Adaptive embeddings `E_A` (`d × N`), adaptive strategy only.
pub const PARAM_ADAPTIVE: &str = "embed_adaptive";
/// Bilinear directed-edge matrix `W` (`d × d`).
pub const PARAM_EDGE: &str = "edge_bilinear";

/// Parameter names of the encoder and the graph convolution.
pub mod names {
    pub const ENC_IN_W: &str = "enc.in.w";
    pub const ENC_IN_B: &str = "enc.in.b";
    pub const TOP_PRIOR: &str = "enc.top_prior";

    pub fn gcn(t: usize) -> String {
        format!("gcn.{t}")
    }
    pub fn up_w1(l: usize) -> String {
        format!("enc.up.{l}.w1")
    }
    pub fn up_b1(l: usize) -> String {
        format!("enc.up.{l}.b1")
    }
    pub fn up_w2(l: usize) -> String {
        format!("enc.up.{l}.w2")
    }
    pub fn up_b2(l: usize) -> String {
        format!("enc.up.{l}.b2")
    }
    pub fn k_w(l: usize) -> String {
        format!("enc.k.{l}.w")
    }
    pub fn k_b(l: usize) -> String {
        format!("enc.k.{l}.b")
    }
    pub fn lam_w(l: usize) -> String {
        format!("enc.lam.{l}.w")
    }
    pub fn lam_b(l: usize) -> String {
        format!("enc.lam.{l}.b")
    }
    pub fn head_k_w(l: usize) -> String {
        format!("enc.head_k.{l}.w")
    }
    pub fn head_k_b(l: usize) -> String {
        format!("enc.head_k.{l}.b")
    }
    pub fn head_lam_w(l: usize) -> String {
        format!("enc.head_lam.{l}.w")
    }
    pub fn head_lam_b(l: usize) -> String {
        format!("enc.head_lam.{l}.b")
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("unknown graph mode `{name}` (known: {known})")]
    UnknownStrategy { name: String, known: String },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: [usize; 2],
        found: [usize; 2],
    },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
}

/// Sizes that fix every parameter shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    /// `[K_0 = V, K_1, …, K_L]`.
    pub layer_sizes: Vec<usize>,
    pub embed_dim: usize,
    pub hidden: usize,
    pub gcn_layers: usize,
    pub init_std: f64,
}

impl ModelDims {
    pub fn new(layer_sizes: Vec<usize>, embed_dim: usize) -> Self {
        Self {
            layer_sizes,
            embed_dim,
            hidden: 256,
            gcn_layers: 2,
            init_std: 0.02,
        }
    }

    pub fn depth(&self) -> usize {
        self.layer_sizes.len().saturating_sub(1)
    }

    pub fn vocab_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_nodes(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layer_sizes.len() < 2 {
            return Err(ModelError::Config("need the vocabulary layer and at least one topic layer".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(ModelError::Config(format!("empty layer in {:?}", self.layer_sizes)));
        }
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(ModelError::Config("embedding dimension and hidden width must be positive".into()));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(ModelError::Config(format!("bad init std {}", self.init_std)));
        }
        Ok(())
    }

    /// Every parameter name and shape, in initialization order (adaptive embeddings excluded).
    pub fn param_shapes(&self) -> Vec<(String, [usize; 2])> {
        let (d, h, v) = (self.embed_dim, self.hidden, self.vocab_size());
        let mut out = vec![
            (PARAM_EMBED.to_string(), [d, self.num_nodes()]),
            (PARAM_EDGE.to_string(), [d, d]),
        ];
        for t in 1..=self.gcn_layers {
            out.push((names::gcn(t), [d, d]));
        }
        out.push((names::ENC_IN_W.into(), [v, h]));
        out.push((names::ENC_IN_B.into(), [1, h]));
        for l in 1..=self.depth() {
            let k = self.layer_sizes[l];
            out.push((names::up_w1(l), [h, h]));
            out.push((names::up_b1(l), [1, h]));
            out.push((names::up_w2(l), [h, h]));
            out.push((names::up_b2(l), [1, h]));
            out.push((names::k_w(l), [h, k]));
            out.push((names::k_b(l), [1, k]));
            out.push((names::lam_w(l), [h, k]));
            out.push((names::lam_b(l), [1, k]));
            out.push((names::head_k_w(l), [2 * k, k]));
            out.push((names::head_k_b(l), [1, k]));
            out.push((names::head_lam_w(l), [2 * k, k]));
            out.push((names::head_lam_b(l), [1, k]));
        }
        out.push((names::TOP_PRIOR.into(), [1, self.layer_sizes[self.depth()]]));
        out
    }
}

/// Gamma prior hyperparameters: top-layer shape `γ` and the rate `c` shared by every layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    pub gamma: f64,
    pub rate: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self { gamma: 0.1, rate: 1.0 }
    }
}

/// Bounds applied to the encoder's Weibull parameters after softplus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampBounds {
    pub k_min: f64,
    pub k_max: f64,
    pub lam_min: f64,
    pub lam_max: f64,
}

impl Default for ClampBounds {
    fn default() -> Self {
        Self {
            k_min: 0.1,
            k_max: 10.0,
            lam_min: 1e-4,
            lam_max: 1e4,
        }
    }
}

/// Tape handles produced by one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct Forward {
    pub params: BoundParams,
    pub graph: GraphView,
    /// `E_T`, the embeddings after graph convolution.
    pub embeddings: Var,
    /// `phi[l − 1]` is `Φ⁽ˡ⁾`.
    pub phi: Vec<Var>,
    pub state: VariationalState,
    pub x: Var,
}

#[derive(Debug, Clone)]
pub struct TopicModel {
    pub dims: ModelDims,
    pub priors: Priors,
    pub clamps: ClampBounds,
    pub params: ParamStore,
    strategy: Arc<dyn GraphStrategy>,
}

fn xavier(rng: &mut Rng64, fan_in: usize, fan_out: usize) -> Tensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    normal_tensor(rng, fan_in, fan_out, std)
}

impl TopicModel {
    /// Fresh parameters: embeddings from `N(0, init_std)`, `W = I`, Xavier-normal
    /// dense weights, zero biases.
    pub fn new(
        dims: ModelDims,
        priors: Priors,
        clamps: ClampBounds,
        strategy: Arc<dyn GraphStrategy>,
        rng: &mut Rng64,
    ) -> Result<Self, ModelError> {
        dims.validate()?;
        validate_priors(&priors)?;
        let mut params = ParamStore::new();
        for (name, [r, c]) in dims.param_shapes() {
            let value = if name == PARAM_EMBED {
                normal_tensor(rng, r, c, dims.init_std)
            } else if name == PARAM_EDGE {
                Tensor::eye(r)
            } else if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") || name == names::TOP_PRIOR {
                Tensor::zeros(r, c)
            } else {
                xavier(rng, r, c)
            };
            params.insert(name, value);
        }
        strategy.init_params(&dims, &mut params, rng);
        Ok(Self {
            dims,
            priors,
            clamps,
            params,
            strategy,
        })
    }

    /// Reassemble a model from stored parameters, checking every shape.
    pub fn from_params(
        dims: ModelDims,
        priors: Priors,
        clamps: ClampBounds,
        strategy: Arc<dyn GraphStrategy>,
        params: ParamStore,
    ) -> Result<Self, ModelError> {
        dims.validate()?;
        validate_priors(&priors)?;
        let mut expected = dims.param_shapes();
        if strategy.revises_structure() {
            expected.push((PARAM_ADAPTIVE.into(), [dims.embed_dim, dims.num_nodes()]));
        }
        for (name, shape) in expected {
            let t = params.get(&name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape {
                return Err(ModelError::ParamShape {
                    name,
                    expected: shape,
                    found: t.shape(),
                });
            }
        }
        Ok(Self {
            dims,
            priors,
            clamps,
            params,
            strategy,
        })
    }

    pub fn strategy(&self) -> &Arc<dyn GraphStrategy> {
        &self.strategy
    }

    pub fn mode(&self) -> &'static str {
        self.strategy.name()
    }

    /// One uniform matrix per topic layer, for [`Sampling::Draw`].
    pub fn draw_uniforms(&self, rng: &mut Rng64, batch: usize) -> Vec<Tensor> {
        (1..=self.dims.depth())
            .map(|l| uniform_tensor(rng, batch, self.dims.layer_sizes[l]))
            .collect()
    }

    fn check_graph(&self, graph: &GraphMatrices) -> Result<(), ModelError> {
        if graph.layer_sizes != self.dims.layer_sizes {
            return Err(ModelError::Config(format!(
                "graph layer sizes {:?} do not match the model's {:?}",
                graph.layer_sizes, self.dims.layer_sizes
            )));
        }
        Ok(())
    }

    /// Graph strategy, graph convolution and `Φ`, without touching documents.
    fn topic_side(&self, tape: &mut Tape, graph: &GraphMatrices) -> Result<(BoundParams, GraphView, Var, Vec<Var>), ModelError> {
        self.check_graph(graph)?;
        let params = self.params.bind(tape);
        let normalized = tape.constant(graph.normalized.clone());
        let view = self.strategy.adjacency(tape, normalized, &params)?;
        let weights: Vec<Var> = (1..=self.dims.gcn_layers).map(|t| params.var(&names::gcn(t))).collect();
        let embeddings = gcn_forward(tape, view.effective, params.var(PARAM_EMBED), &weights)?;
        let phi = compute_phi(tape, embeddings, &self.dims.layer_sizes)?;
        Ok((params, view, embeddings, phi))
    }

    /// Full forward pass over a dense `B × V` count matrix.
    pub fn forward(
        &self,
        tape: &mut Tape,
        counts: &Tensor,
        graph: &GraphMatrices,
        sampling: Sampling<'_>,
    ) -> Result<Forward, ModelError> {
        if counts.cols() != self.dims.vocab_size() {
            return Err(NumericsError::ShapeMismatch {
                op: "forward",
                lhs: counts.shape(),
                rhs: [counts.rows(), self.dims.vocab_size()],
            }
            .into());
        }
        let (params, view, embeddings, phi) = self.topic_side(tape, graph)?;
        let x = tape.constant(counts.clone());
        let state = encode(tape, x, &phi, &params, &self.dims, &self.clamps, sampling)?;
        Ok(Forward {
            params,
            graph: view,
            embeddings,
            phi,
            state,
            x,
        })
    }

    /// Current `Φ⁽¹⁾ … Φ⁽ᴸ⁾` as plain tensors.
    pub fn phi_values(&self, graph: &GraphMatrices) -> Result<Vec<Tensor>, ModelError> {
        let mut tape = Tape::new();
        let (_, _, _, phi) = self.topic_side(&mut tape, graph)?;
        Ok(phi.iter().map(|&p| tape.value(p).clone()).collect())
    }

    /// `E_T` as a plain `d × N` tensor.
    pub fn embedding_values(&self, graph: &GraphMatrices) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let (_, _, e, _) = self.topic_side(&mut tape, graph)?;
        Ok(tape.value(e).clone())
    }

    /// The adaptive matrix `Ã_ada` when the strategy learns one.
    pub fn adaptive_values(&self) -> Option<Tensor> {
        self.params.get(PARAM_ADAPTIVE).map(crate::taxonomy::adaptive_adjacency_values)
    }

    /// The matrix the graph convolution consumes.
    pub fn effective_adjacency(&self, graph: &GraphMatrices) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let (_, view, _, _) = self.topic_side(&mut tape, graph)?;
        Ok(tape.value(view.effective).clone())
    }

    /// Deterministic `θ` (Weibull means) for every layer; entry `l − 1` is `B × K_l`.
    pub fn infer_theta(&self, counts: &Tensor, graph: &GraphMatrices) -> Result<Vec<Tensor>, ModelError> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, counts, graph, Sampling::Mean)?;
        Ok(fwd.state.theta.iter().map(|&t| tape.value(t).clone()).collect())
    }

    /// KL of every layer's Weibull posterior from its Gamma prior, summed over the batch.
    pub fn kl_terms(&self, tape: &mut Tape, fwd: &Forward) -> Result<Vec<Var>, ModelError> {
        let depth = self.dims.depth();
        let st = &fwd.state;
        let mut out = Vec::with_capacity(depth);
        for l in 1..=depth {
            let k = st.shape[l - 1];
            let alpha = if l == depth {
                let [b, kl] = tape.value(k).shape();
                tape.constant(Tensor::filled(b, kl, self.priors.gamma))
            } else {
                let a = tape.matmul_t(st.theta[l], fwd.phi[l], false, true)?;
                tape.clamp(a, 1e-10, f64::INFINITY)?
            };
            let kl = tape.kl_weibull_gamma(k, st.scale[l - 1], alpha, self.priors.rate)?;
            out.push(tape.sum(kl)?);
        }
        Ok(out)
    }
}

fn validate_priors(p: &Priors) -> Result<(), ModelError> {
    if !(p.gamma > 0.0 && p.gamma.is_finite() && p.rate > 0.0 && p.rate.is_finite()) {
        return Err(ModelError::Config(format!("priors must be positive, got γ={} c={}", p.gamma, p.rate)));
    }
    Ok(())
}

/// Weibull mean, re-exported for callers that only hold plain tensors.
pub fn weibull_mean(k: &Tensor, lam: &Tensor) -> Tensor {
    k.zip_map(lam, special::weibull_mean)
}
