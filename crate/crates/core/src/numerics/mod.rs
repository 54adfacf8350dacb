//! Dense tensors, reverse-mode autodiff, special functions, seeded sampling
//! and the AdamW optimizer.

mod optim;
pub mod special;
mod tape;
mod tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use optim::{AdamW, AdamWConfig, BoundParams, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Axis, Tensor};

/// Seeded PRNG used everywhere randomness is needed.
pub type Rng64 = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("tensor dimensions must be positive, got [{rows}, {cols}]")]
    EmptyShape { rows: usize, cols: usize },
    #[error("buffer of length {len} does not fill shape {shape:?}")]
    BufferLength { shape: [usize; 2], len: usize },
    #[error("column slice {start}..{end} out of range for shape {shape:?}")]
    Slice {
        start: usize,
        end: usize,
        shape: [usize; 2],
    },
    #[error("{op}: argument {value} outside the domain (must be > 0)")]
    Domain { op: &'static str, value: f64 },
    #[error("{op}: argument `{arg}` = {value} outside the domain (must be > 0)")]
    DomainArg {
        op: &'static str,
        arg: &'static str,
        value: f64,
    },
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("usage error: {0}")]
    Usage(&'static str),
}

/// Uniform draws in `[1e-12, 1 − 1e-7]`, row-major.
pub fn uniform_tensor(rng: &mut Rng64, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| special::clamp_uniform(rng.random::<f64>()))
}

/// Gaussian draws with the given standard deviation.
pub fn normal_tensor(rng: &mut Rng64, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("standard deviation must be finite and non-negative");
    Tensor::from_fn(rows, cols, |_, _| dist.sample(rng))
}
