mod common;

use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Weibull};

use common::{fd_gradient, integrate, kl_quadrature, random_tensor, rel_err, weighted_sum};
use topickg::numerics::{seeded_rng, special, uniform_tensor, Axis, Tape, Tensor, Var};

#[test]
fn quadrature_reproduces_known_integrals() {
    assert!((integrate(&|x| x * x, 0.0, 1.0, 1e-13) - 1.0 / 3.0).abs() < 1e-13);
    assert!((integrate(&f64::sin, 0.0, std::f64::consts::PI, 1e-13) - 2.0).abs() < 1e-12);
    // integrable endpoint singularity
    assert!((integrate(&|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, 1e-12) - 2.0).abs() < 1e-8);
}

#[test]
fn kl_matches_quadrature_at_spot_values() {
    assert!(special::kl_weibull_gamma(1.0, 1.0, 1.0, 1.0).unwrap().abs() < 1e-12);
    assert!(kl_quadrature(1.0, 1.0, 1.0, 1.0).abs() < 1e-9);
    let a = special::kl_weibull_gamma(2.0, 1.0, 1.0, 1.0).unwrap();
    let q = kl_quadrature(2.0, 1.0, 1.0, 1.0);
    assert!((a - q).abs() < 1e-6, "analytic {a} quadrature {q}");
}

#[test]
fn kl_matches_quadrature_on_random_tuples() {
    let mut rng = seeded_rng(7);
    for _ in 0..100 {
        let [k, lam, alpha, rate]: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.5..5.0));
        let a = special::kl_weibull_gamma(k, lam, alpha, rate).unwrap();
        let q = kl_quadrature(k, lam, alpha, rate);
        assert!((a - q).abs() < 1e-4, "({k}, {lam}, {alpha}, {rate}): analytic {a} quadrature {q}");
        assert!(a >= -1e-8);
    }
}

fn check_op(name: &str, inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) {
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = f(&mut tape, &vars);
        tape.value(y).shape()
    };
    let weights = random_tensor(99, out_shape[0], out_shape[1], -1.0, 1.0);
    let eval = |ins: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = f(&mut tape, &vars);
        let s = weighted_sum(&mut tape, y, &weights);
        (tape, vars, s)
    };
    let (tape, vars, s) = eval(inputs);
    let grads = tape.backward(s).unwrap();
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]);
        let mut probe = |xi: &Tensor| {
            let mut ins = inputs.to_vec();
            ins[i] = xi.clone();
            let (tape, _, s) = eval(&ins);
            tape.value(s).item()
        };
        let numeric = fd_gradient(&mut probe, x, 1e-5);
        for j in 0..x.len() {
            let (a, n) = (analytic.data()[j], numeric.data()[j]);
            assert!(rel_err(a, n, 1e-3) < 1e-4, "{name}: input {i} entry {j}: analytic {a} numeric {n}");
        }
    }
}

#[test]
fn every_differentiable_op_matches_finite_differences() {
    let a = random_tensor(1, 3, 4, -1.0, 1.0);
    let b = random_tensor(2, 3, 4, -1.0, 1.0);
    let pos = random_tensor(3, 3, 4, 0.5, 2.0);
    let sq = random_tensor(4, 4, 2, -1.0, 1.0);
    let row = random_tensor(5, 1, 4, -1.0, 1.0);
    // entries kept away from the relu kink and the clamp bounds
    let off_zero = a.map(|x| if x.abs() < 0.1 { x + 0.3 } else { x });

    check_op("matmul", &[a.clone(), sq.clone()], |t, v| t.matmul(v[0], v[1]).unwrap());
    check_op("matmul_ta", &[a.clone(), b.clone()], |t, v| t.matmul_t(v[0], v[1], true, false).unwrap());
    check_op("matmul_tb", &[a.clone(), b.clone()], |t, v| t.matmul_t(v[0], v[1], false, true).unwrap());
    check_op("add", &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap());
    check_op("add_broadcast", &[a.clone(), row.clone()], |t, v| t.add(v[0], v[1]).unwrap());
    check_op("sub", &[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap());
    check_op("mul", &[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]).unwrap());
    check_op("div", &[a.clone(), pos.clone()], |t, v| t.div(v[0], v[1]).unwrap());
    check_op("scale", &[a.clone()], |t, v| t.scale(v[0], -2.5).unwrap());
    check_op("add_scalar", &[a.clone()], |t, v| t.add_scalar(v[0], 0.7).unwrap());
    check_op("neg", &[a.clone()], |t, v| t.neg(v[0]).unwrap());
    check_op("exp", &[a.clone()], |t, v| t.exp(v[0]).unwrap());
    check_op("log", &[pos.clone()], |t, v| t.log(v[0]).unwrap());
    check_op("softplus", &[a.clone()], |t, v| t.softplus(v[0]).unwrap());
    check_op("relu", &[off_zero.clone()], |t, v| t.relu(v[0]).unwrap());
    check_op("sigmoid", &[a.clone()], |t, v| t.sigmoid(v[0]).unwrap());
    check_op("lgamma", &[pos.clone()], |t, v| t.lgamma(v[0]).unwrap());
    check_op("clamp", &[off_zero.clone()], |t, v| t.clamp(v[0], -0.05, 0.05).unwrap());
    check_op("sum", &[a.clone()], |t, v| t.sum(v[0]).unwrap());
    check_op("mean", &[a.clone()], |t, v| t.mean(v[0]).unwrap());
    check_op("sum_rows", &[a.clone()], |t, v| t.sum_axis(v[0], Axis::Rows).unwrap());
    check_op("sum_cols", &[a.clone()], |t, v| t.sum_axis(v[0], Axis::Cols).unwrap());
    check_op("softmax_rows", &[a.clone()], |t, v| t.softmax(v[0], Axis::Rows).unwrap());
    check_op("softmax_cols", &[a.clone()], |t, v| t.softmax(v[0], Axis::Cols).unwrap());
    check_op("concat_rows", &[a.clone(), row.clone()], |t, v| t.concat(v[0], v[1], Axis::Rows).unwrap());
    check_op("concat_cols", &[a.clone(), b.clone()], |t, v| t.concat(v[0], v[1], Axis::Cols).unwrap());
    check_op("slice_cols", &[a.clone()], |t, v| t.slice_cols(v[0], 1, 3).unwrap());
    check_op("transpose", &[a.clone()], |t, v| t.transpose(v[0]).unwrap());
    check_op("cosine_cols", &[a.clone()], |t, v| t.cosine_similarity_cols(v[0]).unwrap());
    let u = uniform_tensor(&mut seeded_rng(6), 3, 4);
    check_op("weibull_sample", &[pos.clone(), pos.map(|x| x + 0.3)], move |t, v| t.weibull_sample(v[0], v[1], &u).unwrap());
    check_op("kl_weibull_gamma", &[pos.clone(), pos.map(|x| 1.5 * x), pos.map(|x| 2.0 / x)], |t, v| {
        t.kl_weibull_gamma(v[0], v[1], v[2], 1.3).unwrap()
    });
}

#[test]
fn random_composite_matches_finite_differences() {
    let x = random_tensor(10, 4, 5, -1.0, 1.0);
    let w1 = random_tensor(11, 5, 6, -0.5, 0.5);
    let w2 = random_tensor(12, 6, 3, -0.5, 0.5);
    let b = random_tensor(13, 1, 6, -0.1, 0.1);
    check_op("composite", &[x, w1, w2, b], |t, v| {
        let h = t.matmul(v[0], v[1]).unwrap();
        let h = t.add(h, v[3]).unwrap();
        let h = t.softplus(h).unwrap();
        let o = t.matmul(h, v[2]).unwrap();
        let s = t.softmax(o, Axis::Cols).unwrap();
        let l = t.add_scalar(s, 1e-3).unwrap();
        t.log(l).unwrap()
    });
}

#[test]
fn weibull_monte_carlo_mean() {
    let mut rng = seeded_rng(2024);
    let n = 1_000_000;
    let mean = (0..n)
        .map(|_| special::weibull_quantile(2.0, 1.0, rng.random::<f64>()))
        .sum::<f64>()
        / n as f64;
    assert!((mean - 0.886227).abs() < 0.003, "{mean}");
}

/// Kolmogorov–Smirnov statistic of `samples` against `cdf`.
fn ks_statistic(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn weibull_sampler_passes_kolmogorov_smirnov() {
    const N: usize = 100_000;
    // asymptotic critical value at α = 0.01
    let critical = 1.628 / (N as f64).sqrt();
    for &(k, lam) in &[(0.5, 1.0), (2.0, 3.0), (7.0, 0.2)] {
        let u = uniform_tensor(&mut seeded_rng(31), 1, N);
        let mut tape = Tape::new();
        let kv = tape.constant(Tensor::filled(1, N, k));
        let lv = tape.constant(Tensor::filled(1, N, lam));
        let x = tape.weibull_sample(kv, lv, &u).unwrap();
        let reference = Weibull::new(k, lam).unwrap();
        let d = ks_statistic(tape.value(x).data().to_vec(), |x| reference.cdf(x));
        assert!(d < critical, "k={k} λ={lam}: D={d} critical={critical}");
    }
}

#[test]
fn seeded_draws_are_bit_reproducible() {
    let a = uniform_tensor(&mut seeded_rng(5), 8, 8);
    let b = uniform_tensor(&mut seeded_rng(5), 8, 8);
    assert_eq!(a.data(), b.data());
}

fn small_matrix() -> impl Strategy<Value = Tensor> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-30.0f64..30.0, r * c).prop_map(move |d| Tensor::new(r, c, d).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_lies_on_the_simplex(x in small_matrix()) {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let rows = tape.softmax(v, Axis::Rows).unwrap();
        let cols = tape.softmax(v, Axis::Cols).unwrap();
        let (rows, cols) = (tape.value(rows), tape.value(cols));
        for j in 0..x.cols() {
            let col = rows.column_vec(j);
            prop_assert!(col.iter().all(|&p| p >= 0.0));
            prop_assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for i in 0..x.rows() {
            let row = cols.row_slice(i);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_is_non_negative(k in 0.1f64..10.0, lam in 1e-3f64..1e3, alpha in 0.05f64..20.0, rate in 0.1f64..10.0) {
        prop_assert!(special::kl_weibull_gamma(k, lam, alpha, rate).unwrap() >= -1e-8);
    }

    #[test]
    fn weibull_draws_are_positive_and_finite(k in 0.1f64..10.0, lam in 1e-4f64..1e4, u in 0.0f64..=1.0) {
        let x = special::weibull_quantile(k, lam, u);
        prop_assert!(x > 0.0 && x.is_finite());
    }
}
