//! Grid sweeps over (β, s) with repeated seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::taxonomy::TopicTree;
use crate::trainer::{train, TrainConfig};

use super::{evaluate, EvalError, EvalOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    /// `(β, s)` cells.
    pub cells: Vec<(f64, f64)>,
    pub seeds: usize,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub beta: f64,
    pub threshold: f64,
    /// Per-seed values of every metric, in seed order (failed seeds omitted).
    pub samples: BTreeMap<String, Vec<f64>>,
    /// `(seed, message)` of every failed run.
    pub failures: Vec<(u64, String)>,
}

impl SweepCell {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        let v = self.samples.get(metric)?;
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Sample standard deviation (`n − 1` denominator); 0 for a single value.
    pub fn std(&self, metric: &str) -> Option<f64> {
        let v = self.samples.get(metric)?;
        let m = self.mean(metric)?;
        if v.len() < 2 {
            return Some(0.0);
        }
        Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub const CSV_HEADER: &'static str = "beta,threshold,metric,mean,std,n,failures";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for c in &self.cells {
            if c.samples.is_empty() {
                let _ = writeln!(s, "{},{},none,,,0,{}", c.beta, c.threshold, c.failures.len());
            }
            for (name, v) in &c.samples {
                let _ = writeln!(
                    s,
                    "{},{},{name},{},{},{},{}",
                    c.beta,
                    c.threshold,
                    c.mean(name).unwrap_or(f64::NAN),
                    c.std(name).unwrap_or(f64::NAN),
                    v.len(),
                    c.failures.len()
                );
            }
        }
        s
    }
}

/// Train and evaluate every cell for seeds `base.seed + 0 .. base.seed + seeds − 1`.
/// A failing run is recorded in its cell and the sweep continues.
pub fn sweep(
    corpus: &Corpus,
    tree: &TopicTree,
    base: &TrainConfig,
    grid: &SweepGrid,
    eval: &EvalOptions,
) -> Result<SweepResult, EvalError> {
    if grid.cells.is_empty() || grid.seeds == 0 {
        return Err(EvalError::Usage("sweep grid needs at least one cell and one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..grid.cells.len())
        .flat_map(|c| (0..grid.seeds as u64).map(move |s| (c, s)))
        .collect();
    let run = |&(cell, offset): &(usize, u64)| {
        let (beta, threshold) = grid.cells[cell];
        let mut cfg = base.clone();
        cfg.beta = beta;
        cfg.threshold = threshold;
        cfg.seed = base.seed.wrapping_add(offset);
        let seed = cfg.seed;
        let outcome = train(corpus, tree, &cfg)
            .map_err(|e| e.to_string())
            .and_then(|o| evaluate(&o.model, &o.graph, corpus, eval).map_err(|e| e.to_string()));
        (cell, seed, outcome)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.workers)
        .build()
        .map_err(|e| EvalError::Usage(format!("cannot start sweep workers: {e}")))?;
    let results: Vec<_> = pool.install(|| jobs.par_iter().map(run).collect());

    let mut cells: Vec<SweepCell> = grid
        .cells
        .iter()
        .map(|&(beta, threshold)| SweepCell {
            beta,
            threshold,
            samples: BTreeMap::new(),
            failures: Vec::new(),
        })
        .collect();
    for (cell, seed, outcome) in results {
        match outcome {
            Ok(report) => {
                for (name, v) in report.flatten() {
                    cells[cell].samples.entry(name).or_default().push(v);
                }
            }
            Err(msg) => {
                log::warn!("sweep cell {cell} seed {seed} failed: {msg}");
                cells[cell].failures.push((seed, msg));
            }
        }
    }
    Ok(SweepResult { cells })
}
