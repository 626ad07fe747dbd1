//! One-vs-rest L2-regularized hinge-loss linear SVMs trained by dual
//! coordinate descent.
//!
//! Each binary problem is
//!
//! ```text
//! min  1/2 (|w|^2 + b^2) + sum_i C_i max(0, 1 - y_i (w.x_i + b))
//! ```
//!
//! with the bias folded in as a constant feature of value 1, and
//! `C_i = C * class_weight(label_i)`. The dual is solved one coordinate at a
//! time in a seeded random order, with shrinking of bound variables.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassWeights;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::rng::{self, StreamRng};
use crate::tree::{argmax, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    pub class_weights: Option<ClassWeights>,
    /// Maximum number of passes over the data.
    pub max_iter: usize,
    /// Bound on the projected dual gradient at convergence.
    pub tol: f64,
    pub seed: u64,
    /// Record the dual objective after every pass.
    pub trace_objective: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            class_weights: None,
            max_iter: 10_000,
            tol: 1e-4,
            seed: 0,
            trace_objective: false,
        }
    }
}

/// `C = 10^x` for `x` at `n` evenly spaced points of `[lo, hi]`.
pub fn c_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = if n == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            };
            10f64.powf(x)
        })
        .collect()
}

/// The 800-point tuning grid over `[1e-7, 1e7]`.
pub fn default_c_grid() -> Vec<f64> {
    c_grid(800, -7.0, 7.0)
}

/// Solution of one binary dual problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub w: Vec<f64>,
    pub b: f64,
    pub alpha: Vec<f64>,
    pub converged: bool,
    pub epochs: usize,
    /// Dual objective `1/2 |(w,b)|^2 - sum alpha` after each pass, if traced.
    pub objective_trace: Vec<f64>,
}

fn margin(x: &FeatureMatrix, i: usize, w: &[f64], b: f64) -> f64 {
    x.nonzeros(i).iter().map(|&(j, v)| w[j as usize] * v).sum::<f64>() + b
}

/// Projected gradient of the dual at coordinate `i`.
pub fn projected_gradient(grad: f64, alpha: f64, upper: f64) -> f64 {
    if alpha <= 0.0 {
        grad.min(0.0)
    } else if alpha >= upper {
        grad.max(0.0)
    } else {
        grad
    }
}

/// Dual coordinate descent for labels `y` in {-1, +1} and per-example
/// upper bounds `upper` (the per-example cost).
pub fn solve_dual(
    x: &FeatureMatrix,
    y: &[f64],
    upper: &[f64],
    tol: f64,
    max_iter: usize,
    trace: bool,
    rng: &mut StreamRng,
) -> DualSolution {
    let n = x.n_rows();
    let d = x.n_cols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    let qd: Vec<f64> = (0..n)
        .map(|i| x.nonzeros(i).iter().map(|(_, v)| v * v).sum::<f64>() + 1.0)
        .collect();
    let mut index: Vec<usize> = (0..n).collect();
    let mut active = n;
    let mut pg_max_old = f64::INFINITY;
    let mut pg_min_old = f64::NEG_INFINITY;
    let mut converged = false;
    let mut epochs = 0;
    let mut objective_trace = Vec::new();

    let dual_objective = |w: &[f64], b: f64, alpha: &[f64]| {
        0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b) - alpha.iter().sum::<f64>()
    };

    while epochs < max_iter {
        epochs += 1;
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        index[..active].shuffle(rng);
        let mut s = 0;
        while s < active {
            let i = index[s];
            let g = y[i] * margin(x, i, &w, b) - 1.0;
            let u = upper[i];
            let mut pg = 0.0;
            if alpha[i] == 0.0 {
                if g > pg_max_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                } else if g < 0.0 {
                    pg = g;
                }
            } else if alpha[i] == u {
                if g < pg_min_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                } else if g > 0.0 {
                    pg = g;
                }
            } else {
                pg = g;
            }
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, u);
                let step = (alpha[i] - old) * y[i];
                for &(j, v) in x.nonzeros(i) {
                    w[j as usize] += step * v;
                }
                b += step;
            }
            s += 1;
        }
        if trace {
            objective_trace.push(dual_objective(&w, b, &alpha));
        }

        if pg_max - pg_min <= tol {
            if active == n {
                // verification sweep at the final iterate, no updates
                let worst = (0..n)
                    .map(|i| {
                        let g = y[i] * margin(x, i, &w, b) - 1.0;
                        projected_gradient(g, alpha[i], upper[i]).abs()
                    })
                    .fold(0.0, f64::max);
                if worst <= tol {
                    converged = true;
                    break;
                }
            }
            active = n;
            pg_max_old = f64::INFINITY;
            pg_min_old = f64::NEG_INFINITY;
            continue;
        }
        pg_max_old = if pg_max <= 0.0 { f64::INFINITY } else { pg_max };
        pg_min_old = if pg_min >= 0.0 { f64::NEG_INFINITY } else { pg_min };
    }

    DualSolution {
        w,
        b,
        alpha,
        converged,
        epochs,
        objective_trace,
    }
}

/// One weight vector and bias per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    /// False for every one-vs-rest problem that hit `max_iter`.
    pub converged: Vec<bool>,
    pub n_features: usize,
    pub params: SvmParams,
}

pub fn fit_linear_svm(data: &TrainingSet<'_>, params: &SvmParams, categories: &[String]) -> Result<SvmModel> {
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::Config(format!("C must be positive, got {}", params.c)));
    }
    if params.tol <= 0.0 || params.max_iter == 0 {
        return Err(Error::Config("tol and max_iter must be positive".into()));
    }
    let k = data.n_classes;
    if categories.len() != k {
        return Err(Error::SchemaMismatch(format!(
            "{} category names for {k} classes",
            categories.len()
        )));
    }
    let mut present = vec![false; k];
    for &c in data.y {
        present[c] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::EmptyCategory(categories[missing].clone()));
    }
    let costs: Vec<f64> = match &params.class_weights {
        Some(cw) => cw.sample_weights(data.y),
        None => vec![1.0; data.len()],
    }
    .into_iter()
    .map(|w| w * params.c)
    .collect();

    let solutions: Vec<DualSolution> = (0..k)
        .into_par_iter()
        .map(|class| {
            let y: Vec<f64> = data.y.iter().map(|&c| if c == class { 1.0 } else { -1.0 }).collect();
            let mut rng = rng::stream(params.seed, class as u64);
            solve_dual(
                data.x,
                &y,
                &costs,
                params.tol,
                params.max_iter,
                params.trace_objective,
                &mut rng,
            )
        })
        .collect();
    Ok(SvmModel {
        converged: solutions.iter().map(|s| s.converged).collect(),
        biases: solutions.iter().map(|s| s.b).collect(),
        weights: solutions.into_iter().map(|s| s.w).collect(),
        n_features: data.x.n_cols(),
        params: params.clone(),
    })
}

impl SvmModel {
    /// `w_k . x + b_k` for every category.
    pub fn decision_values(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.decision_values(x))
    }

    /// One-hot vector of the discrete prediction.
    pub fn predict_one_hot(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.weights.len()];
        v[self.predict(x)] = 1.0;
        v
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

/// Signed coefficient ranking for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions {
    /// `(feature, coefficient)`, largest first.
    pub top: Vec<(usize, f64)>,
    /// `(feature, coefficient)`, most negative first.
    pub bottom: Vec<(usize, f64)>,
}

pub fn class_attribute_contributions(model: &SvmModel, category: usize, k: usize) -> Result<Contributions> {
    let w = model.weights.get(category).ok_or(Error::LabelOutOfRange {
        index: category,
        classes: model.weights.len(),
    })?;
    if k > w.len() {
        return Err(Error::Config(format!("k = {k} exceeds the {} attributes", w.len())));
    }
    let mut desc: Vec<usize> = (0..w.len()).collect();
    desc.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let mut asc: Vec<usize> = (0..w.len()).collect();
    asc.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));
    Ok(Contributions {
        top: desc[..k].iter().map(|&i| (i, w[i])).collect(),
        bottom: asc[..k].iter().map(|&i| (i, w[i])).collect(),
    })
}
