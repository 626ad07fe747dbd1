//! Logistic-regression stacking over the summed class distributions of the
//! random forest and the boosted model.
//!
//! The meta-model is an L2-regularized multinomial logistic regression,
//! `1/2 |W|^2 + C * sum_i -log softmax(W z_i + b)[y_i]` with `C = 0.2` and an
//! unpenalized intercept, fit by damped Newton steps.

use serde::{Deserialize, Serialize};

use crate::container::digest;
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestModel, ForestParams};
use crate::gbm::{fit_gbm, softmax, GbmModel, GbmParams};
use crate::svm::{fit_linear_svm, SvmModel, SvmParams};
use crate::tree::{argmax, TrainingSet};

/// Inverse regularization strength of the meta-model. Not tuned.
pub const META_C: f64 = 0.2;
/// Gradient-norm stopping tolerance of the meta-model fit.
pub const META_GRAD_TOL: f64 = 1e-6;

/// Elementwise sum of base-model distributions; not renormalized.
pub fn stack_features(p_forest: &[f64], p_gbm: &[f64]) -> Result<Vec<f64>> {
    sum_distributions(&[p_forest, p_gbm])
}

pub fn sum_distributions(parts: &[&[f64]]) -> Result<Vec<f64>> {
    let k = parts.first().map_or(0, |p| p.len());
    if parts.iter().any(|p| p.len() != k) {
        return Err(Error::SchemaMismatch(format!(
            "base model outputs have lengths {:?}",
            parts.iter().map(|p| p.len()).collect::<Vec<_>>()
        )));
    }
    Ok((0..k).map(|c| parts.iter().map(|p| p[c]).sum()).collect())
}

/// Multinomial logistic regression weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    /// `weights[k]` is the coefficient row of class `k`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub c: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl MetaModel {
    pub fn scores(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(z).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }

    pub fn predict_proba(&self, z: &[f64]) -> Vec<f64> {
        softmax(&self.scores(z))
    }

    fn from_flat(theta: &[f64], k: usize, d: usize, c: f64) -> Self {
        let stride = d + 1;
        Self {
            weights: (0..k).map(|a| theta[a * stride..a * stride + d].to_vec()).collect(),
            bias: (0..k).map(|a| theta[a * stride + d]).collect(),
            c,
            converged: false,
            iterations: 0,
        }
    }
}

/// Objective and gradient of the meta-model at flat parameters `theta`,
/// laid out per class as `[w_1 .. w_d, b]`.
pub fn meta_objective(theta: &[f64], inputs: &[Vec<f64>], labels: &[usize], k: usize, c: f64) -> (f64, Vec<f64>) {
    let d = inputs.first().map_or(0, Vec::len);
    let stride = d + 1;
    let mut f = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for a in 0..k {
        for u in 0..d {
            let w = theta[a * stride + u];
            f += 0.5 * w * w;
            grad[a * stride + u] = w;
        }
    }
    for (z, &y) in inputs.iter().zip(labels) {
        let scores: Vec<f64> = (0..k)
            .map(|a| (0..d).map(|u| theta[a * stride + u] * z[u]).sum::<f64>() + theta[a * stride + d])
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        f += c * (lse - scores[y]);
        for a in 0..k {
            let r = c * ((scores[a] - lse).exp() - (a == y) as u8 as f64);
            for u in 0..d {
                grad[a * stride + u] += r * z[u];
            }
            grad[a * stride + d] += r;
        }
    }
    (f, grad)
}

fn meta_hessian(theta: &[f64], inputs: &[Vec<f64>], k: usize, c: f64) -> Vec<Vec<f64>> {
    let d = inputs.first().map_or(0, Vec::len);
    let stride = d + 1;
    let m = k * stride;
    let mut h = vec![vec![0.0; m]; m];
    for a in 0..k {
        for u in 0..d {
            h[a * stride + u][a * stride + u] = 1.0;
        }
    }
    let mut zt = vec![1.0; stride];
    for z in inputs {
        zt[..d].copy_from_slice(z);
        let scores: Vec<f64> = (0..k)
            .map(|a| (0..stride).map(|u| theta[a * stride + u] * zt[u]).sum())
            .collect();
        let p = softmax(&scores);
        for a in 0..k {
            for b in 0..k {
                let coef = c * p[a] * ((a == b) as u8 as f64 - p[b]);
                for u in 0..stride {
                    let row = &mut h[a * stride + u];
                    for v in 0..stride {
                        row[b * stride + v] += coef * zt[u] * zt[v];
                    }
                }
            }
        }
    }
    h
}

/// Solves `A x = rhs` for symmetric positive-definite `A`; `None` if the
/// factorization breaks down.
fn cholesky_solve(a: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i][p] * l[j][p]).sum();
            if i == j {
                let v = a[i][i] - s;
                if v <= 0.0 || !v.is_finite() {
                    return None;
                }
                l[i][i] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (rhs[i] - (0..i).map(|p| l[i][p] * y[p]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|p| l[p][i] * x[p]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fits the meta-model on `(stack_features, label)` pairs.
pub fn fit_meta(inputs: &[Vec<f64>], labels: &[usize], n_classes: usize, c: f64) -> Result<MetaModel> {
    if inputs.len() != labels.len() || inputs.is_empty() {
        return Err(Error::Alignment(format!(
            "{} meta inputs and {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::LabelOutOfRange {
            index: bad,
            classes: n_classes,
        });
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::Config("meta-training labels contain a single class".into()));
    }
    let d = inputs[0].len();
    let m = n_classes * (d + 1);
    let mut theta = vec![0.0; m];
    let (mut f, mut g) = meta_objective(&theta, inputs, labels, n_classes, c);
    let mut converged = norm(&g) <= META_GRAD_TOL;
    let mut iterations = 0;
    while !converged && iterations < 200 {
        iterations += 1;
        let mut h = meta_hessian(&theta, inputs, n_classes, c);
        let scale = h.iter().enumerate().map(|(i, r)| r[i]).fold(1.0, f64::max);
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut damping = 1e-10 * scale;
        let step = loop {
            for (i, row) in h.iter_mut().enumerate() {
                row[i] += damping;
            }
            if let Some(s) = cholesky_solve(&h, &neg_g) {
                break s;
            }
            damping *= 10.0;
        };
        let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let (ft, gt) = meta_objective(&trial, inputs, labels, n_classes, c);
            if ft <= f + 1e-4 * t * slope || (ft <= f && norm(&gt) < norm(&g)) {
                theta = trial;
                f = ft;
                g = gt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        converged = norm(&g) <= META_GRAD_TOL;
        if !accepted {
            break;
        }
    }
    let mut model = MetaModel::from_flat(&theta, n_classes, d, c);
    model.converged = converged;
    model.iterations = iterations;
    Ok(model)
}

/// Meta-model plus digests of the base models it was fitted against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackModel {
    pub meta: MetaModel,
    pub forest_digest: String,
    pub gbm_digest: String,
    /// Experimental: add the SVM's one-hot prediction to the summed inputs.
    pub svm_one_hot: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedPrediction {
    pub distribution: Vec<f64>,
    pub class: usize,
}

pub fn predict_stacked(stack: &StackModel, p_forest: &[f64], p_gbm: &[f64]) -> Result<StackedPrediction> {
    let z = stack_features(p_forest, p_gbm)?;
    predict_from_features(stack, &z)
}

pub fn predict_from_features(stack: &StackModel, z: &[f64]) -> Result<StackedPrediction> {
    if z.len() != stack.meta.weights.first().map_or(0, Vec::len) {
        return Err(Error::SchemaMismatch(format!(
            "meta-model expects {} inputs, got {}",
            stack.meta.weights.first().map_or(0, Vec::len),
            z.len()
        )));
    }
    let distribution = stack.meta.predict_proba(z);
    let class = argmax(&distribution);
    Ok(StackedPrediction { distribution, class })
}

/// A stack together with the base models it combines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackBundle {
    pub stack: StackModel,
    pub forest: ForestModel,
    pub gbm: GbmModel,
    /// Only for the experimental one-hot SVM input.
    pub svm: Option<SvmModel>,
}

impl StackBundle {
    /// The meta-model inputs for one case.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pf = self.forest.predict_proba(x);
        let pg = self.gbm.predict_proba(x);
        match (&self.svm, self.stack.svm_one_hot) {
            (Some(svm), true) => sum_distributions(&[&pf, &pg, &svm.predict_one_hot(x)]),
            (None, true) => Err(Error::Config("stack expects an SVM but carries none".into())),
            _ => stack_features(&pf, &pg),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<StackedPrediction> {
        predict_from_features(&self.stack, &self.features(x)?)
    }

    /// Checks the embedded base models against the recorded digests.
    pub fn verify(&self) -> Result<()> {
        if digest(&self.forest)? != self.stack.forest_digest || digest(&self.gbm)? != self.stack.gbm_digest {
            return Err(Error::Container("stack base models do not match their digests".into()));
        }
        Ok(())
    }
}

/// Trains the base models on `train`, then fits the meta-model on their
/// predictions for `val`, so no meta-training input comes from a model that
/// saw that case. The boosted model early-stops on `val` unless its params
/// fix the round count. `svm` enables the experimental one-hot input.
pub fn fit_stack(
    train: &TrainingSet<'_>,
    val: &TrainingSet<'_>,
    forest: &ForestParams,
    gbm: &GbmParams,
    svm: Option<&SvmParams>,
    categories: &[String],
) -> Result<StackBundle> {
    if val.is_empty() {
        return Err(Error::Config("stacking needs a nonempty validation set".into()));
    }
    let forest = fit_forest(train, forest)?;
    let gbm = fit_gbm(train, Some(val), gbm)?;
    let svm = svm.map(|p| fit_linear_svm(train, p, categories)).transpose()?;
    let inputs = (0..val.len())
        .map(|i| {
            let x = val.x.row(i);
            let pf = forest.predict_proba(x);
            let pg = gbm.predict_proba(x);
            match &svm {
                Some(s) => sum_distributions(&[&pf, &pg, &s.predict_one_hot(x)]),
                None => stack_features(&pf, &pg),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = fit_meta(&inputs, val.y, val.n_classes, META_C)?;
    Ok(StackBundle {
        stack: StackModel {
            meta,
            forest_digest: digest(&forest)?,
            gbm_digest: digest(&gbm)?,
            svm_one_hot: svm.is_some(),
        },
        forest,
        gbm,
        svm,
    })
}
