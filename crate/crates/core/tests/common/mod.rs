#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;

use topickg::corpus::{Corpus, Document};
use topickg::numerics::{seeded_rng, special, Tape, Tensor, Var};
use topickg::synthetic::PlantedConfig;
use topickg::taxonomy::{TopicNode, TopicTree};
use topickg::trainer::TrainConfig;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point Gauss rule.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let (f1, f2) = (f(c - h * XGK[i]), f(c + h * XGK[i]));
        k += WGK[i] * (f1 + f2);
        if i % 2 == 1 {
            g += WG[i / 2] * (f1 + f2);
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod quadrature by recursive bisection.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let (v, err) = gk15(f, a, b);
        // below round-off further bisection cannot help
        if err <= tol.max(50.0 * f64::EPSILON * v.abs()) || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth - 1) + rec(f, m, b, 0.5 * tol, depth - 1)
    }
    rec(f, a, b, tol, 60)
}

/// `∫ q ln(q/p)` for `q = Weibull(k, λ)`, `p = Gamma(α, rate)`, integrated on
/// `(0, B)` with `B = 20 λ Γ(1 + 1/k)` doubled until the remaining mass is negligible.
pub fn kl_quadrature(k: f64, lam: f64, alpha: f64, rate: f64) -> f64 {
    let ln_gamma_a = special::lgamma(alpha).unwrap();
    let integrand = |x: f64| {
        if x <= 0.0 {
            return 0.0;
        }
        let z = x / lam;
        let zk = z.powf(k);
        let ln_q = k.ln() - lam.ln() + (k - 1.0) * z.ln() - zk;
        let ln_p = alpha * rate.ln() - ln_gamma_a + (alpha - 1.0) * x.ln() - rate * x;
        let q = ln_q.exp();
        if q == 0.0 {
            0.0
        } else {
            q * (ln_q - ln_p)
        }
    };
    let mut upper = 20.0 * special::weibull_mean(k, lam);
    while 1.0 - special::weibull_cdf(k, lam, upper) > 1e-14 {
        upper *= 2.0;
    }
    // split at the mean so the bulk and the tail get separate error budgets
    let m = special::weibull_mean(k, lam);
    integrate(&integrand, 0.0, m, 1e-11) + integrate(&integrand, m, upper, 1e-11)
}

/// Central finite difference of `f` at every entry of `x`.
pub fn fd_gradient(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Relative error with a floor so that near-zero gradients compare absolutely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Reduce any tensor-valued expression to a scalar with fixed random weights.
pub fn weighted_sum(tape: &mut Tape, y: Var, weights: &Tensor) -> Var {
    let w = tape.constant(weights.clone());
    let p = tape.mul(y, w).unwrap();
    tape.sum(p).unwrap()
}

pub fn random_tensor(seed: u64, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let mut rng = seeded_rng(seed);
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// `V = 30` words under layers `[5, 3, 1]`: six words per leaf topic, two concept
/// words per leaf topic and one per layer-2 topic.
pub fn toy_tree() -> TopicTree {
    let sizes = [30usize, 5, 3, 1];
    let mut nodes = Vec::new();
    for (layer, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            nodes.push(TopicNode {
                name: format!("l{layer}n{i}"),
                layer,
                definition: None,
            });
        }
    }
    let (t1, t2, root) = (30, 35, 38);
    let mut edges = BTreeSet::new();
    let mut concepts = BTreeSet::new();
    for k in 0..5 {
        for w in 0..6 {
            edges.insert((t1 + k, k * 6 + w));
        }
        concepts.insert((t1 + k, k * 6));
        concepts.insert((t1 + k, k * 6 + 1));
        edges.insert((t2 + (k / 2).min(2), t1 + k));
    }
    for j in 0..3 {
        edges.insert((root, t2 + j));
        concepts.insert((t2 + j, j * 12 + 2));
    }
    TopicTree::new(nodes, edges, concepts).unwrap()
}

/// Random documents over the toy tree's vocabulary.
pub fn toy_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = seeded_rng(seed);
    let vocab: Vec<String> = toy_tree().vocab();
    let docs = (0..n)
        .map(|j| {
            let topic = j % 5;
            Document::from_counts((0..15).map(|_| {
                let w = if rng.random::<f64>() < 0.8 {
                    topic * 6 + rng.random_range(0..6)
                } else {
                    rng.random_range(0..30)
                };
                (w as u32, 1)
            }))
        })
        .collect();
    Corpus::new(vocab, docs, Some((0..n).map(|j| j % 5).collect())).unwrap()
}

/// Small, fast model settings for the planted corpora.
pub fn small_config(mode: &str, beta: f64, iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        mode: mode.into(),
        embed_dim: 16,
        hidden: 64,
        batch_size: 50,
        beta,
        iterations: Some(iterations),
        seed,
        ..TrainConfig::default()
    }
}

/// The six-topic, two-group planted corpus of the recovery experiments.
pub fn planted_config(seed: u64) -> PlantedConfig {
    PlantedConfig {
        seed,
        ..PlantedConfig::default()
    }
}
