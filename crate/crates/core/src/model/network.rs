//! Differentiable building blocks of the model, written against a [`Tape`].

use crate::numerics::{special, Axis, BoundParams, NumericsError, Tape, Tensor, Var};

use super::{names, ClampBounds, ModelDims};

/// Residual graph convolution: `E⁽ᵗ⁾ = E⁽ᵗ⁻¹⁾ + ReLU(W_g⁽ᵗ⁾ E⁽ᵗ⁻¹⁾ Ã)`.
pub fn gcn_forward(tape: &mut Tape, adjacency: Var, embeddings: Var, weights: &[Var]) -> Result<Var, NumericsError> {
    let mut e = embeddings;
    for &w in weights {
        let we = tape.matmul(w, e)?;
        let agg = tape.matmul(we, adjacency)?;
        let act = tape.relu(agg)?;
        e = tape.add(e, act)?;
    }
    Ok(e)
}

/// Columns of `embeddings` belonging to `layer` under the global node order.
pub fn layer_embeddings(tape: &mut Tape, embeddings: Var, layer_sizes: &[usize], layer: usize) -> Result<Var, NumericsError> {
    let start: usize = layer_sizes[..layer].iter().sum();
    tape.slice_cols(embeddings, start, start + layer_sizes[layer])
}

/// `Φ⁽ˡ⁾[:, k] = softmax_i(e_i⁽ˡ⁻¹⁾ᵀ e_k⁽ˡ⁾)` for `l = 1..L`; entry `l − 1` of
/// the result is the `K_{l−1} × K_l` matrix of layer `l`.
pub fn compute_phi(tape: &mut Tape, embeddings: Var, layer_sizes: &[usize]) -> Result<Vec<Var>, NumericsError> {
    let depth = layer_sizes.len() - 1;
    let per_layer: Vec<Var> = (0..=depth)
        .map(|l| layer_embeddings(tape, embeddings, layer_sizes, l))
        .collect::<Result<_, _>>()?;
    (1..=depth)
        .map(|l| {
            let logits = tape.matmul_t(per_layer[l - 1], per_layer[l], true, false)?;
            tape.softmax(logits, Axis::Rows)
        })
        .collect()
}

/// `Σ s·z − softplus(z)`, i.e. the Bernoulli log-likelihood of binary
/// targets `s` under logits `z`, in its overflow-free form.
pub fn bernoulli_log_lik(tape: &mut Tape, logits: Var, targets: &Tensor) -> Result<Var, NumericsError> {
    let s = tape.constant(targets.clone());
    let sz = tape.mul(s, logits)?;
    let sp = tape.softplus(logits)?;
    let diff = tape.sub(sz, sp)?;
    tape.sum(diff)
}

/// Log-likelihood of every entry of every `S⁽ˡ⁾` (logits `e⁽ˡ⁻¹⁾ᵀ W e⁽ˡ⁾`) and
/// `C⁽ˡ⁾` (logits `e_v⁽⁰⁾ᵀ e_k⁽ˡ⁾`).
pub fn edge_log_probs(
    tape: &mut Tape,
    embeddings: Var,
    bilinear: Var,
    layer_sizes: &[usize],
    s: &[Tensor],
    c: &[Tensor],
) -> Result<Var, NumericsError> {
    let depth = layer_sizes.len() - 1;
    let per_layer: Vec<Var> = (0..=depth)
        .map(|l| layer_embeddings(tape, embeddings, layer_sizes, l))
        .collect::<Result<_, _>>()?;
    let mut total: Option<Var> = None;
    for l in 1..=depth {
        let we = tape.matmul(bilinear, per_layer[l])?;
        let s_logits = tape.matmul_t(per_layer[l - 1], we, true, false)?;
        let s_ll = bernoulli_log_lik(tape, s_logits, &s[l - 1])?;
        let c_logits = tape.matmul_t(per_layer[0], per_layer[l], true, false)?;
        let c_ll = bernoulli_log_lik(tape, c_logits, &c[l - 1])?;
        let layer = tape.add(s_ll, c_ll)?;
        total = Some(match total {
            Some(t) => tape.add(t, layer)?,
            None => layer,
        });
    }
    Ok(total.expect("at least one topic layer"))
}

/// `Σ x log(rate) − rate − log Γ(x + 1)` with `rate = θ Φᵀ` floored at 1e-10.
/// `x` is `B × V`, `phi` is `V × K₁`, `theta` is `B × K₁`.
pub fn poisson_log_lik(tape: &mut Tape, x: Var, phi: Var, theta: Var) -> Result<Var, NumericsError> {
    let rate = tape.matmul_t(theta, phi, false, true)?;
    let rate = tape.clamp(rate, 1e-10, f64::INFINITY)?;
    let log_rate = tape.log(rate)?;
    let xl = tape.mul(x, log_rate)?;
    let body = tape.sub(xl, rate)?;
    let body = tape.sum(body)?;
    let norm: f64 = tape
        .value(x)
        .data()
        .iter()
        .map(|&v| statrs::function::gamma::ln_gamma(v + 1.0))
        .sum();
    tape.add_scalar(body, -norm)
}

/// How θ is produced from the Weibull posteriors.
#[derive(Debug, Clone, Copy)]
pub enum Sampling<'a> {
    /// Reparameterized draws from per-layer uniforms (`uniforms[l − 1]` is `B × K_l`).
    Draw(&'a [Tensor]),
    /// Posterior mean `λ Γ(1 + 1/k)`; no gradient flows through θ.
    Mean,
}

/// Per-layer Weibull posteriors; index `l − 1` holds layer `l`.
#[derive(Debug, Clone)]
pub struct VariationalState {
    pub hidden: Vec<Var>,
    pub shape: Vec<Var>,
    pub scale: Vec<Var>,
    pub theta: Vec<Var>,
}

fn dense(tape: &mut Tape, input: Var, params: &BoundParams, w: &str, b: &str) -> Result<Var, NumericsError> {
    let h = tape.matmul(input, params.var(w))?;
    tape.add(h, params.var(b))
}

/// Upward residual pass followed by the downward Weibull path.
pub fn encode(
    tape: &mut Tape,
    x: Var,
    phis: &[Var],
    params: &BoundParams,
    dims: &ModelDims,
    clamps: &ClampBounds,
    sampling: Sampling<'_>,
) -> Result<VariationalState, NumericsError> {
    let depth = dims.depth();
    let batch = tape.value(x).rows();
    let mut h = dense(tape, x, params, names::ENC_IN_W, names::ENC_IN_B)?;
    let mut hidden = Vec::with_capacity(depth);
    for l in 1..=depth {
        let a = dense(tape, h, params, &names::up_w1(l), &names::up_b1(l))?;
        let a = tape.relu(a)?;
        let f = dense(tape, a, params, &names::up_w2(l), &names::up_b2(l))?;
        h = tape.add(h, f)?;
        hidden.push(h);
    }

    let mut shape: Vec<Option<Var>> = vec![None; depth];
    let mut scale: Vec<Option<Var>> = vec![None; depth];
    let mut theta: Vec<Option<Var>> = vec![None; depth];
    for l in (1..=depth).rev() {
        let hl = hidden[l - 1];
        let k_hat = dense(tape, hl, params, &names::k_w(l), &names::k_b(l))?;
        let k_hat = tape.relu(k_hat)?;
        let lam_hat = dense(tape, hl, params, &names::lam_w(l), &names::lam_b(l))?;
        let lam_hat = tape.relu(lam_hat)?;
        let prior_input = if l == depth {
            let raw = params.var(names::TOP_PRIOR);
            let pos = tape.softplus(raw)?;
            let ones = tape.constant(Tensor::ones(batch, 1));
            tape.mul(ones, pos)?
        } else {
            let upper = theta[l].expect("upper layer inferred first");
            tape.matmul_t(upper, phis[l], false, true)?
        };
        let k_in = tape.concat(prior_input, k_hat, Axis::Cols)?;
        let lam_in = tape.concat(prior_input, lam_hat, Axis::Cols)?;
        let k = dense(tape, k_in, params, &names::head_k_w(l), &names::head_k_b(l))?;
        let k = tape.softplus(k)?;
        let k = tape.clamp(k, clamps.k_min, clamps.k_max)?;
        let lam = dense(tape, lam_in, params, &names::head_lam_w(l), &names::head_lam_b(l))?;
        let lam = tape.softplus(lam)?;
        let lam = tape.clamp(lam, clamps.lam_min, clamps.lam_max)?;
        let th = match sampling {
            Sampling::Draw(uniforms) => tape.weibull_sample(k, lam, &uniforms[l - 1])?,
            Sampling::Mean => {
                let mean = tape.value(k).zip_map(tape.value(lam), |kk, ll| special::weibull_mean(kk, ll));
                tape.constant(mean)
            }
        };
        shape[l - 1] = Some(k);
        scale[l - 1] = Some(lam);
        theta[l - 1] = Some(th);
    }
    let unwrap = |v: Vec<Option<Var>>| v.into_iter().map(|x| x.expect("every layer visited")).collect();
    Ok(VariationalState {
        hidden,
        shape: unwrap(shape),
        scale: unwrap(scale),
        theta: unwrap(theta),
    })
}
