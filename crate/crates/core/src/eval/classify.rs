//! Document classification from topic proportions.

use crate::numerics::Tensor;

use super::EvalError;

pub const L2_PENALTY: f64 = 1e-4;
pub const GD_STEPS: usize = 500;
pub const GD_LEARNING_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyResult {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub predictions: Vec<usize>,
}

/// Multinomial logistic regression fitted by full-batch gradient descent.
/// Features are standardized with the training mean and standard deviation.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    mean: Vec<f64>,
    std: Vec<f64>,
    /// `(features + 1) × classes`, bias in the last row.
    weights: Tensor,
}

impl LogisticRegression {
    pub fn fit(x: &Tensor, y: &[usize], classes: usize) -> Result<Self, EvalError> {
        let (n, f) = (x.rows(), x.cols());
        if n != y.len() || n == 0 {
            return Err(EvalError::Usage(format!("{n} feature rows for {} labels", y.len())));
        }
        let distinct: std::collections::BTreeSet<_> = y.iter().collect();
        if distinct.len() < 2 {
            return Err(EvalError::SingleClass);
        }
        let mean: Vec<f64> = (0..f).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
        let std: Vec<f64> = (0..f)
            .map(|j| {
                let var = (0..n).map(|i| (x.get(i, j) - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if var > 0.0 { var.sqrt() } else { 1.0 }
            })
            .collect();
        let mut model = Self {
            mean,
            std,
            weights: Tensor::zeros(f + 1, classes),
        };
        let z = model.design(x);
        let mut onehot = Tensor::zeros(n, classes);
        for (i, &c) in y.iter().enumerate() {
            onehot.set(i, c, 1.0);
        }
        for _ in 0..GD_STEPS {
            let p = softmax_rows(&Tensor::matmul(&z, &model.weights, false, false).expect("design matches weights"));
            let resid = p.zip_map(&onehot, |a, b| a - b);
            let mut grad = Tensor::matmul(&z, &resid, true, false).expect("shapes agree").scale(1.0 / n as f64);
            for r in 0..f {
                for c in 0..classes {
                    grad.set(r, c, grad.get(r, c) + L2_PENALTY * model.weights.get(r, c));
                }
            }
            model.weights = model.weights.zip_map(&grad, |w, g| w - GD_LEARNING_RATE * g);
        }
        Ok(model)
    }

    fn design(&self, x: &Tensor) -> Tensor {
        let f = x.cols();
        Tensor::from_fn(x.rows(), f + 1, |i, j| {
            if j == f {
                1.0
            } else {
                (x.get(i, j) - self.mean[j]) / self.std[j]
            }
        })
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        let s = Tensor::matmul(&self.design(x), &self.weights, false, false).expect("feature count matches");
        (0..s.rows())
            .map(|i| {
                let row = s.row_slice(i);
                // first maximum wins
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect()
    }
}

fn softmax_rows(s: &Tensor) -> Tensor {
    let mut out = s.clone();
    for i in 0..s.rows() {
        let row = s.row_slice(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for j in 0..s.cols() {
            out.set(i, j, (row[j] - m).exp() / z);
        }
    }
    out
}

/// Micro F1 (equal to accuracy for single-label data) and macro F1 (mean of
/// per-class F1 over classes present in either labels or predictions).
pub fn f1_scores(truth: &[usize], pred: &[usize]) -> (f64, f64) {
    let n = truth.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let correct = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    let classes: std::collections::BTreeSet<usize> = truth.iter().chain(pred).copied().collect();
    let mut f1s = Vec::new();
    for &c in &classes {
        let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count() as f64;
        let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != c && p == c).count() as f64;
        let fn_ = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p != c).count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        f1s.push(if denom > 0.0 { 2.0 * tp / denom } else { 0.0 });
    }
    (correct as f64 / n as f64, f1s.iter().sum::<f64>() / f1s.len() as f64)
}

/// Fit on the training rows, report F1 on the test rows.
pub fn classify_theta(train_x: &Tensor, train_y: &[usize], test_x: &Tensor, test_y: &[usize]) -> Result<ClassifyResult, EvalError> {
    if train_x.cols() != test_x.cols() || test_x.rows() != test_y.len() {
        return Err(EvalError::Usage("train and test features disagree in shape".into()));
    }
    let classes = train_y.iter().chain(test_y).max().map_or(0, |m| m + 1);
    let model = LogisticRegression::fit(train_x, train_y, classes)?;
    let predictions = model.predict(test_x);
    let (micro_f1, macro_f1) = f1_scores(test_y, &predictions);
    Ok(ClassifyResult {
        micro_f1,
        macro_f1,
        predictions,
    })
}
