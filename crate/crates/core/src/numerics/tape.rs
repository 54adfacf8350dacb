//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation executed through it. Values live on the
//! tape and are addressed by [`Var`] handles; [`Tape::backward`] walks the
//! records in reverse and accumulates vector-Jacobian products.

use std::sync::atomic::{AtomicU32, Ordering};

use super::special::{self, kl_grad, kl_unchecked};
use super::tensor::{broadcast_zip, reduce_to, Axis, Tensor};
use super::NumericsError;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Relu(usize),
    Sigmoid(usize),
    Lgamma(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, Axis),
    Softmax(usize, Axis),
    Concat(usize, usize, Axis),
    SliceCols(usize, usize),
    Transpose(usize),
    CosineCols { x: usize, normed: Tensor, norms: Vec<f64> },
    Weibull { k: usize, lam: usize, log_w: Tensor },
    KlWeibullGamma { k: usize, lam: usize, alpha: usize, rate: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` is unreachable from the loss.
    pub fn get(&self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable from a different tape");
        let i = v.index();
        match &self.grads[i] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[i][0], self.shapes[i][1]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable from a different tape");
        let i = v.index();
        self.grads[i]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[i][0], self.shapes[i][1]))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_forward(x: &Tensor, axis: Axis) -> Tensor {
    let [r, c] = x.shape();
    let mut out = x.clone();
    match axis {
        Axis::Cols => {
            for i in 0..r {
                let row = &mut out.data_mut()[i * c..(i + 1) * c];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    z += *v;
                }
                for v in row.iter_mut() {
                    *v /= z;
                }
            }
        }
        Axis::Rows => {
            for j in 0..c {
                let m = (0..r).map(|i| x.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in 0..r {
                    let e = (x.get(i, j) - m).exp();
                    out.set(i, j, e);
                    z += e;
                }
                for i in 0..r {
                    let v = out.get(i, j) / z;
                    out.set(i, j, v);
                }
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input (a parameter or probe).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from a different tape");
        &self.nodes[v.index()].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index()].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var { tape: self.id, idx }
    }

    fn idx(&self, v: Var) -> Result<usize, NumericsError> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(NumericsError::Usage("variable does not belong to this tape"));
        }
        Ok(v.index())
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: impl Fn(usize) -> Op) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(f);
        let ng = self.ng(ia);
        Ok(self.push(value, op(ia), ng))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = broadcast_zip(name, &self.nodes[ia].value, &self.nodes[ib].value, f)?;
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(value, op(ia, ib), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` transposes when the matching flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = Tensor::matmul(&self.nodes[ia].value, &self.nodes[ib].value, ta, tb)?;
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(value, Op::MatMul { a: ia, b: ib, ta, tb }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumericsError> {
        self.unary(a, |x| x * factor, |i| Op::Scale(i, factor))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var, NumericsError> {
        self.unary(a, |x| x + offset, Op::Offset)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, f64::ln, Op::Log)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, softplus, Op::Softplus)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn lgamma(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        if let Some(&bad) = self.nodes[ia].value.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(NumericsError::Domain {
                op: "lgamma",
                value: bad,
            });
        }
        self.unary(a, statrs::function::gamma::ln_gamma, Op::Lgamma)
    }

    /// Clamp into `[lo, hi]`; gradients pass only inside the range.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, NumericsError> {
        self.unary(a, |x| x.clamp(lo, hi), |i| Op::Clamp(i, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.sum();
        let ng = self.ng(ia);
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), ng))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let s = v.sum() / v.len() as f64;
        let ng = self.ng(ia);
        Ok(self.push(Tensor::scalar(s), Op::Mean(ia), ng))
    }

    /// Sum along `axis`: `Axis::Rows` gives `1 × cols`, `Axis::Cols` gives `rows × 1`.
    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let [r, c] = x.shape();
        let value = match axis {
            Axis::Rows => Tensor::from_fn(1, c, |_, j| (0..r).map(|i| x.get(i, j)).sum()),
            Axis::Cols => Tensor::from_fn(r, 1, |i, _| x.row_slice(i).iter().sum()),
        };
        let ng = self.ng(ia);
        Ok(self.push(value, Op::SumAxis(ia, axis), ng))
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let value = softmax_forward(&self.nodes[ia].value, axis);
        let ng = self.ng(ia);
        Ok(self.push(value, Op::Softmax(ia, axis), ng))
    }

    /// Concatenate along `axis`: `Axis::Cols` places `b` to the right of `a`.
    pub fn concat(&mut self, a: Var, b: Var, axis: Axis) -> Result<Var, NumericsError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let value = match axis {
            Axis::Cols => {
                if x.rows() != y.rows() {
                    return Err(NumericsError::ShapeMismatch {
                        op: "concat",
                        lhs: x.shape(),
                        rhs: y.shape(),
                    });
                }
                let (cx, cy) = (x.cols(), y.cols());
                Tensor::from_fn(x.rows(), cx + cy, |i, j| {
                    if j < cx {
                        x.get(i, j)
                    } else {
                        y.get(i, j - cx)
                    }
                })
            }
            Axis::Rows => {
                if x.cols() != y.cols() {
                    return Err(NumericsError::ShapeMismatch {
                        op: "concat",
                        lhs: x.shape(),
                        rhs: y.shape(),
                    });
                }
                let mut data = x.data().to_vec();
                data.extend_from_slice(y.data());
                Tensor::new(x.rows() + y.rows(), x.cols(), data)?
            }
        };
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(value, Op::Concat(ia, ib, axis), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        if start >= end || end > x.cols() {
            return Err(NumericsError::Slice {
                start,
                end,
                shape: x.shape(),
            });
        }
        let value = x.slice_cols(start, end);
        let ng = self.ng(ia);
        Ok(self.push(value, Op::SliceCols(ia, start), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.transpose();
        let ng = self.ng(ia);
        Ok(self.push(value, Op::Transpose(ia), ng))
    }

    /// Pairwise cosine similarity between the columns of a `d × n` tensor,
    /// giving `n × n`. Zero-norm columns score 0 against everything.
    pub fn cosine_similarity_cols(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let [d, n] = x.shape();
        let norms: Vec<f64> = (0..n)
            .map(|j| (0..d).map(|i| x.get(i, j).powi(2)).sum::<f64>().sqrt())
            .collect();
        let normed = Tensor::from_fn(d, n, |i, j| {
            if norms[j] > 0.0 {
                x.get(i, j) / norms[j]
            } else {
                0.0
            }
        });
        let value = Tensor::matmul(&normed, &normed, true, false)?;
        let ng = self.ng(ia);
        Ok(self.push(value, Op::CosineCols { x: ia, normed, norms }, ng))
    }

    /// Reparameterized Weibull draw `λ (−ln(1 − u))^{1/k}` for fixed uniforms `u`.
    pub fn weibull_sample(&mut self, k: Var, lam: Var, uniforms: &Tensor) -> Result<Var, NumericsError> {
        let (ik, il) = (self.idx(k)?, self.idx(lam)?);
        let (kv, lv) = (&self.nodes[ik].value, &self.nodes[il].value);
        if kv.shape() != lv.shape() || kv.shape() != uniforms.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "weibull_sample",
                lhs: kv.shape(),
                rhs: if kv.shape() != lv.shape() {
                    lv.shape()
                } else {
                    uniforms.shape()
                },
            });
        }
        let log_w = uniforms.map(|u| (-(1.0 - special::clamp_uniform(u)).ln()).ln());
        let value = Tensor::from_fn(kv.rows(), kv.cols(), |i, j| {
            lv.get(i, j) * (log_w.get(i, j) / kv.get(i, j)).exp()
        });
        let ng = self.ng(ik) || self.ng(il);
        Ok(self.push(value, Op::Weibull { k: ik, lam: il, log_w }, ng))
    }

    /// Elementwise closed-form KL(Weibull(k, λ) ‖ Gamma(α, rate)).
    pub fn kl_weibull_gamma(&mut self, k: Var, lam: Var, alpha: Var, rate: f64) -> Result<Var, NumericsError> {
        let (ik, il, ia) = (self.idx(k)?, self.idx(lam)?, self.idx(alpha)?);
        let (kv, lv, av) = (&self.nodes[ik].value, &self.nodes[il].value, &self.nodes[ia].value);
        for other in [lv, av] {
            if other.shape() != kv.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "kl_weibull_gamma",
                    lhs: kv.shape(),
                    rhs: other.shape(),
                });
            }
        }
        if rate <= 0.0 {
            return Err(NumericsError::DomainArg {
                op: "kl_weibull_gamma",
                arg: "rate",
                value: rate,
            });
        }
        for (arg, t) in [("k", kv), ("lambda", lv), ("alpha", av)] {
            if let Some(&bad) = t.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
                return Err(NumericsError::DomainArg {
                    op: "kl_weibull_gamma",
                    arg,
                    value: bad,
                });
            }
        }
        let value = Tensor::from_fn(kv.rows(), kv.cols(), |i, j| {
            kl_unchecked(kv.get(i, j), lv.get(i, j), av.get(i, j), rate)
        });
        let ng = self.ng(ik) || self.ng(il) || self.ng(ia);
        Ok(self.push(
            value,
            Op::KlWeibullGamma {
                k: ik,
                lam: il,
                alpha: ia,
                rate,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let il = self.idx(loss)?;
        let lv = &self.nodes[il].value;
        if lv.shape() != [1, 1] {
            return Err(NumericsError::Usage("backward requires a scalar (1 × 1) loss"));
        }
        if !self.nodes[il].needs_grad {
            return Err(NumericsError::Usage(
                "backward on a value that does not depend on any differentiable input",
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; il + 1];
        grads[il] = Some(Tensor::scalar(1.0));
        for i in (0..=il).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let mut shapes: Vec<[usize; 2]> = self.nodes.iter().map(|n| n.value.shape()).collect();
        shapes.truncate(self.nodes.len());
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
        if !self.nodes[i].needs_grad {
            return;
        }
        match &mut grads[i] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), NumericsError> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                if self.ng(a) {
                    let ga = if ta {
                        Tensor::matmul(val(b), g, tb, true)?
                    } else {
                        Tensor::matmul(g, val(b), false, !tb)?
                    };
                    self.accumulate(grads, a, ga);
                }
                if self.ng(b) {
                    let gb = if tb {
                        Tensor::matmul(g, val(a), true, ta)?
                    } else {
                        Tensor::matmul(val(a), g, !ta, false)?
                    };
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, reduce_to(g, val(a).shape()));
                self.accumulate(grads, b, reduce_to(g, val(b).shape()));
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, reduce_to(g, val(a).shape()));
                if self.ng(b) {
                    self.accumulate(grads, b, reduce_to(&g.scale(-1.0), val(b).shape()));
                }
            }
            &Op::Mul(a, b) => {
                if self.ng(a) {
                    let ga = broadcast_zip("mul", g, val(b), |x, y| x * y)?;
                    self.accumulate(grads, a, reduce_to(&ga, val(a).shape()));
                }
                if self.ng(b) {
                    let gb = broadcast_zip("mul", g, val(a), |x, y| x * y)?;
                    self.accumulate(grads, b, reduce_to(&gb, val(b).shape()));
                }
            }
            &Op::Div(a, b) => {
                if self.ng(a) {
                    let ga = broadcast_zip("div", g, val(b), |x, y| x / y)?;
                    self.accumulate(grads, a, reduce_to(&ga, val(a).shape()));
                }
                if self.ng(b) {
                    // d(a/b)/db = −y / b
                    let gy = g.zip_map(y, |x, q| -x * q);
                    let gb = broadcast_zip("div", &gy, val(b), |x, bb| x / bb)?;
                    self.accumulate(grads, b, reduce_to(&gb, val(b).shape()));
                }
            }
            &Op::Scale(a, f) => self.accumulate(grads, a, g.scale(f)),
            &Op::Offset(a) => self.accumulate(grads, a, g.clone()),
            &Op::Exp(a) => self.accumulate(grads, a, g.zip_map(y, |x, e| x * e)),
            &Op::Log(a) => self.accumulate(grads, a, g.zip_map(val(a), |x, v| x / v)),
            &Op::Softplus(a) => self.accumulate(grads, a, g.zip_map(val(a), |x, v| x * sigmoid(v))),
            &Op::Relu(a) => self.accumulate(
                grads,
                a,
                g.zip_map(val(a), |x, v| if v > 0.0 { x } else { 0.0 }),
            ),
            &Op::Sigmoid(a) => self.accumulate(grads, a, g.zip_map(y, |x, s| x * s * (1.0 - s))),
            &Op::Lgamma(a) => self.accumulate(grads, a, g.zip_map(val(a), |x, v| x * special::digamma(v))),
            &Op::Clamp(a, lo, hi) => self.accumulate(
                grads,
                a,
                g.zip_map(val(a), |x, v| if v >= lo && v <= hi { x } else { 0.0 }),
            ),
            &Op::Sum(a) => {
                let s = val(a).shape();
                self.accumulate(grads, a, Tensor::filled(s[0], s[1], g.item()));
            }
            &Op::Mean(a) => {
                let s = val(a).shape();
                let n = (s[0] * s[1]) as f64;
                self.accumulate(grads, a, Tensor::filled(s[0], s[1], g.item() / n));
            }
            &Op::SumAxis(a, axis) => {
                let [r, c] = val(a).shape();
                let ga = match axis {
                    Axis::Rows => Tensor::from_fn(r, c, |_, j| g.get(0, j)),
                    Axis::Cols => Tensor::from_fn(r, c, |i, _| g.get(i, 0)),
                };
                self.accumulate(grads, a, ga);
            }
            &Op::Softmax(a, axis) => {
                let [r, c] = y.shape();
                let mut ga = Tensor::zeros(r, c);
                match axis {
                    Axis::Cols => {
                        for ii in 0..r {
                            let dot: f64 = (0..c).map(|j| g.get(ii, j) * y.get(ii, j)).sum();
                            for j in 0..c {
                                ga.set(ii, j, y.get(ii, j) * (g.get(ii, j) - dot));
                            }
                        }
                    }
                    Axis::Rows => {
                        for j in 0..c {
                            let dot: f64 = (0..r).map(|ii| g.get(ii, j) * y.get(ii, j)).sum();
                            for ii in 0..r {
                                ga.set(ii, j, y.get(ii, j) * (g.get(ii, j) - dot));
                            }
                        }
                    }
                }
                self.accumulate(grads, a, ga);
            }
            &Op::Concat(a, b, axis) => {
                let sa = val(a).shape();
                match axis {
                    Axis::Cols => {
                        if self.ng(a) {
                            self.accumulate(grads, a, g.slice_cols(0, sa[1]));
                        }
                        if self.ng(b) {
                            self.accumulate(grads, b, g.slice_cols(sa[1], g.cols()));
                        }
                    }
                    Axis::Rows => {
                        if self.ng(a) {
                            self.accumulate(grads, a, g.slice_rows(0, sa[0]));
                        }
                        if self.ng(b) {
                            self.accumulate(grads, b, g.slice_rows(sa[0], g.rows()));
                        }
                    }
                }
            }
            &Op::SliceCols(a, start) => {
                let [r, c] = val(a).shape();
                let w = g.cols();
                let ga = Tensor::from_fn(r, c, |ii, j| {
                    if j >= start && j < start + w {
                        g.get(ii, j - start)
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, a, ga);
            }
            &Op::Transpose(a) => self.accumulate(grads, a, g.transpose()),
            Op::CosineCols { x, normed, norms } => {
                // dL/dN = N (G + Gᵀ); project out the radial component per column.
                let gsym = g.zip_map(&g.transpose(), |p, q| p + q);
                let dn = Tensor::matmul(normed, &gsym, false, false)?;
                let [d, n] = normed.shape();
                let mut gx = Tensor::zeros(d, n);
                for j in 0..n {
                    if norms[j] == 0.0 {
                        continue;
                    }
                    let radial: f64 = (0..d).map(|r| normed.get(r, j) * dn.get(r, j)).sum();
                    for r in 0..d {
                        gx.set(r, j, (dn.get(r, j) - normed.get(r, j) * radial) / norms[j]);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Weibull { k, lam, log_w } => {
                let (kv, lv) = (val(*k), val(*lam));
                if self.ng(*k) {
                    let gk = Tensor::from_fn(y.rows(), y.cols(), |r, c| {
                        let kk = kv.get(r, c);
                        -g.get(r, c) * y.get(r, c) * log_w.get(r, c) / (kk * kk)
                    });
                    self.accumulate(grads, *k, gk);
                }
                if self.ng(*lam) {
                    let gl = Tensor::from_fn(y.rows(), y.cols(), |r, c| g.get(r, c) * y.get(r, c) / lv.get(r, c));
                    self.accumulate(grads, *lam, gl);
                }
            }
            &Op::KlWeibullGamma { k, lam, alpha, rate } => {
                let (kv, lv, av) = (val(k), val(lam), val(alpha));
                let [r, c] = kv.shape();
                let mut gk = Tensor::zeros(r, c);
                let mut gl = Tensor::zeros(r, c);
                let mut ga = Tensor::zeros(r, c);
                for ii in 0..r {
                    for j in 0..c {
                        let (dk, dl, da) = kl_grad(kv.get(ii, j), lv.get(ii, j), av.get(ii, j), rate);
                        let up = g.get(ii, j);
                        gk.set(ii, j, up * dk);
                        gl.set(ii, j, up * dl);
                        ga.set(ii, j, up * da);
                    }
                }
                self.accumulate(grads, k, gk);
                self.accumulate(grads, lam, gl);
                self.accumulate(grads, alpha, ga);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_input_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![0.0, 0.0]));
        let s = t.softmax(x, Axis::Cols).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softplus_and_sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        let sp = t.softplus(x).unwrap();
        let sg = t.sigmoid(x).unwrap();
        assert!((t.value(sp).item() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(t.value(sg).item(), 0.5);
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let s = t.sigmoid(x).unwrap();
        let loss = t.scale(s, 3.0).unwrap();
        let g = t.backward(loss).unwrap();
        assert!((g.get(x).item() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn linear_map_gradient_is_outer_product() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::new(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap());
        let x = t.constant(Tensor::column(vec![1.0, 2.0, 3.0]));
        let y = t.matmul(w, x).unwrap();
        let loss = t.sum(y).unwrap();
        let g = t.backward(loss).unwrap().get(w);
        assert_eq!(g.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::scalar(2.0));
        let b = t.leaf(Tensor::ones(2, 2));
        let loss = t.exp(a).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(b), Tensor::zeros(2, 2));
    }

    #[test]
    fn backward_usage_errors() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::scalar(1.0));
        assert!(matches!(t.backward(c), Err(NumericsError::Usage(_))));
        let m = t.leaf(Tensor::ones(2, 2));
        assert!(matches!(t.backward(m), Err(NumericsError::Usage(_))));
        let mut other = Tape::new();
        let foreign = other.leaf(Tensor::scalar(1.0));
        assert!(matches!(t.backward(foreign), Err(NumericsError::Usage(_))));
    }

    #[test]
    fn lgamma_rejects_non_positive() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(vec![1.0, 0.0]));
        assert!(matches!(t.lgamma(x), Err(NumericsError::Domain { .. })));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(2, 3));
        let b = t.leaf(Tensor::zeros(3, 2));
        let err = t.add(a, b).unwrap_err();
        assert!(err.to_string().contains("add"));
    }

    #[test]
    fn cosine_zero_column_scores_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap());
        let c = t.cosine_similarity_cols(x).unwrap();
        let v = t.value(c);
        assert!((v.get(0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(v.get(0, 1), 0.0);
        assert_eq!(v.get(1, 1), 0.0);
    }
}
