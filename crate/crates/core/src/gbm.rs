//! Stochastic gradient-boosted regression trees on the multinomial (or
//! binary) log loss, with shrinkage, row subsampling, per-level column
//! sampling, a minimum child hessian, L2 leaf regularization and
//! validation-loss early stopping.
//!
//! Multiclass models grow one tree per class per round. Binary models grow
//! a single tree per round on the log-odds of the second category.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassWeights;
use crate::error::{Error, Result};
use crate::forest::Importance;
use crate::matrix::FeatureMatrix;
use crate::rng::{self, StreamRng};
use crate::tree::{argmax, TrainingSet, GAIN_EPS};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmParams {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub subsample: f64,
    pub colsample_bylevel: f64,
    pub lambda: f64,
    pub ntrees_cap: usize,
    pub patience: usize,
    pub seed: u64,
    pub class_weights: Option<ClassWeights>,
    /// Train exactly this many rounds without early stopping (final refits).
    pub fixed_rounds: Option<usize>,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            max_depth: 3,
            learning_rate: 0.1,
            min_child_weight: 1.0,
            subsample: 1.0,
            colsample_bylevel: 1.0,
            lambda: 1.0,
            ntrees_cap: 2000,
            patience: 200,
            seed: 0,
            class_weights: None,
            fixed_rounds: None,
        }
    }
}

impl GbmParams {
    fn validate(&self, n_classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        for (name, v) in [
            ("subsample", self.subsample),
            ("colsample_bylevel", self.colsample_bylevel),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        if self.min_child_weight < 0.0 || self.lambda < 0.0 {
            return bad("min_child_weight and lambda must be >= 0".into());
        }
        if self.ntrees_cap == 0 || self.patience == 0 {
            return bad("ntrees_cap and patience must be positive".into());
        }
        if let Some(w) = &self.class_weights {
            if w.weights.len() != n_classes {
                return Err(Error::SchemaMismatch(format!(
                    "{} class weights for {n_classes} classes",
                    w.weights.len()
                )));
            }
        }
        Ok(())
    }
}

/// Loss, gradient and diagonal hessian of one weighted example.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub hessian: Vec<f64>,
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// `-w log softmax(scores)[label]` with gradient `w (p_k - [k = label])`
/// and hessian `w p_k (1 - p_k)`.
pub fn softmax_logloss(scores: &[f64], label: usize, weight: f64) -> LossTerms {
    let p = softmax(scores);
    let loss = -weight * p[label].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln();
    let gradient = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| weight * (pk - (k == label) as u8 as f64))
        .collect();
    let hessian = p.iter().map(|&pk| weight * pk * (1.0 - pk)).collect();
    LossTerms {
        loss,
        gradient,
        hessian,
    }
}

/// Patience-based early stopping on a stream of validation losses.
///
/// Round 0 is the initial (pre-boosting) loss. Training stops once
/// `patience` rounds pass without a strict improvement, or at `cap`.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    cap: usize,
    best_round: usize,
    best_loss: f64,
}

impl EarlyStopping {
    pub fn new(patience: usize, cap: usize) -> Self {
        Self {
            patience,
            cap,
            best_round: 0,
            best_loss: f64::INFINITY,
        }
    }

    /// Records the loss after `round`; returns false when training must stop.
    pub fn observe(&mut self, round: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_round = round;
        }
        round < self.cap && round - self.best_round < self.patience
    }

    pub fn best_round(&self) -> usize {
        self.best_round
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegNode {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
        gain: f64,
        /// Hessian sum at the node.
        cover: f64,
    },
    Leaf {
        /// Already scaled by the learning rate.
        value: f64,
    },
}

/// Pre-order regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    }
                }
                RegNode::Leaf { value } => return *value,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub n_classes: usize,
    pub n_features: usize,
    /// Initial scores: log class priors (multiclass) or prior log-odds (binary).
    pub base_scores: Vec<f64>,
    /// One tree per output per round.
    pub rounds: Vec<Vec<RegTree>>,
    /// Number of leading rounds used for prediction.
    pub best_round: usize,
    pub params: GbmParams,
    /// Losses after each round; entry 0 is before any tree.
    pub log: Vec<RoundLog>,
}

fn n_outputs(n_classes: usize) -> usize {
    if n_classes == 2 {
        1
    } else {
        n_classes
    }
}

/// Expands raw model outputs into per-class softmax scores.
fn class_scores(raw: &[f64], n_classes: usize) -> Vec<f64> {
    if n_classes == 2 {
        vec![0.0, raw[0]]
    } else {
        raw.to_vec()
    }
}

impl GbmModel {
    /// Raw additive scores using the first `best_round` rounds.
    pub fn raw_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.base_scores.clone();
        for round in &self.rounds[..self.best_round] {
            for (acc, tree) in s.iter_mut().zip(round) {
                *acc += tree.predict(x);
            }
        }
        s
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&class_scores(&self.raw_scores(x), self.n_classes))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }

    /// Rows of `round,train_loss,val_loss`.
    pub fn training_log_csv(&self) -> String {
        let mut s = String::from("round,train_loss,val_loss\n");
        for r in &self.log {
            s.push_str(&format!("{},{},{}\n", r.round, r.train_loss, r.val_loss));
        }
        s
    }
}

/// Weighted class priors, floored away from zero.
fn base_scores(y: &[usize], w: &[f64], n_classes: usize) -> Vec<f64> {
    let mut prior = vec![0.0; n_classes];
    for (&c, &wi) in y.iter().zip(w) {
        prior[c] += wi;
    }
    let total: f64 = prior.iter().sum();
    let prior: Vec<f64> = prior
        .iter()
        .map(|p| (p / total).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
        .collect();
    if n_classes == 2 {
        vec![(prior[1] / prior[0]).ln()]
    } else {
        prior.iter().map(|p| p.ln()).collect()
    }
}

fn mean_loss(scores: &[f64], y: &[usize], w: &[f64], n_classes: usize) -> f64 {
    let k = n_outputs(n_classes);
    let mut total = 0.0;
    let mut wsum = 0.0;
    for (i, (&c, &wi)) in y.iter().zip(w).enumerate() {
        let s = class_scores(&scores[i * k..(i + 1) * k], n_classes);
        total += softmax_logloss(&s, c, wi).loss;
        wsum += wi;
    }
    total / wsum
}

/// Fits a boosted model. `val` drives early stopping and is required unless
/// `params.fixed_rounds` is set.
pub fn fit_gbm(train: &TrainingSet<'_>, val: Option<&TrainingSet<'_>>, params: &GbmParams) -> Result<GbmModel> {
    if train.is_empty() {
        return Err(Error::Sizing { needed: 1, got: 0 });
    }
    params.validate(train.n_classes)?;
    let val = match (val, params.fixed_rounds) {
        (Some(v), _) if v.is_empty() => return Err(Error::Config("validation set is empty".into())),
        (None, None) => return Err(Error::Config("a validation set is required for early stopping".into())),
        (v, _) => v,
    };
    let n_classes = train.n_classes;
    let k = n_outputs(n_classes);
    let d = train.x.n_cols();
    let weights = |y: &[usize]| match &params.class_weights {
        Some(cw) => cw.sample_weights(y),
        None => vec![1.0; y.len()],
    };
    let w_train = weights(train.y);
    let w_val = val.map(|v| weights(v.y)).unwrap_or_default();

    let base = base_scores(train.y, &w_train, n_classes);
    let n = train.len();
    let mut s_train: Vec<f64> = base.iter().copied().cycle().take(n * k).collect();
    let n_val = val.map_or(0, |v| v.len());
    let mut s_val: Vec<f64> = base.iter().copied().cycle().take(n_val * k).collect();

    let val_loss = |s: &[f64]| val.map_or(f64::NAN, |v| mean_loss(s, v.y, &w_val, n_classes));
    let mut log = vec![RoundLog {
        round: 0,
        train_loss: mean_loss(&s_train, train.y, &w_train, n_classes),
        val_loss: val_loss(&s_val),
    }];
    let mut stopper = EarlyStopping::new(params.patience, params.ntrees_cap);
    let cap = params.fixed_rounds.unwrap_or(params.ntrees_cap);
    if params.fixed_rounds.is_none() {
        stopper.observe(0, log[0].val_loss);
    }

    let n_sub = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let n_cols_level = ((params.colsample_bylevel * d as f64).ceil() as usize).clamp(1, d);
    let mut rounds: Vec<Vec<RegTree>> = Vec::new();
    let mut grad = vec![0.0; n * k];
    let mut hess = vec![0.0; n * k];

    for round in 1..=cap {
        let mut rng = rng::stream(params.seed, round as u64);
        let rows: Vec<usize> = if n_sub < n {
            let mut r = rand::seq::index::sample(&mut rng, n, n_sub).into_vec();
            r.sort_unstable();
            r
        } else {
            (0..n).collect()
        };
        for &i in &rows {
            let s = class_scores(&s_train[i * k..(i + 1) * k], n_classes);
            let t = softmax_logloss(&s, train.y[i], w_train[i]);
            let off = n_classes - k; // binary uses the second class only
            for c in 0..k {
                grad[i * k + c] = t.gradient[c + off];
                hess[i * k + c] = t.hessian[c + off];
            }
        }
        let round_seed: u64 = rng.gen();
        let trees: Vec<RegTree> = (0..k)
            .into_par_iter()
            .map(|c| {
                let mut tree_rng = rng::stream(round_seed, c as u64);
                let g: Vec<f64> = (0..n).map(|i| grad[i * k + c]).collect();
                let h: Vec<f64> = (0..n).map(|i| hess[i * k + c]).collect();
                grow_regression_tree(train.x, &rows, &g, &h, params, n_cols_level, &mut tree_rng)
            })
            .collect();
        for (c, tree) in trees.iter().enumerate() {
            for i in 0..n {
                s_train[i * k + c] += tree.predict(train.x.row(i));
            }
            if let Some(v) = val {
                for i in 0..n_val {
                    s_val[i * k + c] += tree.predict(v.x.row(i));
                }
            }
        }
        rounds.push(trees);
        let entry = RoundLog {
            round,
            train_loss: mean_loss(&s_train, train.y, &w_train, n_classes),
            val_loss: val_loss(&s_val),
        };
        log.push(entry);
        if params.fixed_rounds.is_none() && !stopper.observe(round, entry.val_loss) {
            break;
        }
    }

    let best_round = match params.fixed_rounds {
        Some(r) => r,
        None => stopper.best_round(),
    };
    Ok(GbmModel {
        n_classes,
        n_features: d,
        base_scores: base,
        rounds,
        best_round,
        params: params.clone(),
        log,
    })
}

struct RegSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn split_score(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        g * g / denom
    } else {
        0.0
    }
}

fn best_regression_split(
    x: &FeatureMatrix,
    rows: &[usize],
    g: &[f64],
    h: &[f64],
    candidates: &[usize],
    params: &GbmParams,
) -> Option<RegSplit> {
    let (gt, ht) = rows.iter().fold((0.0, 0.0), |(a, b), &r| (a + g[r], b + h[r]));
    let parent = split_score(gt, ht, params.lambda);
    let mut slot = vec![usize::MAX; x.n_cols()];
    for (ci, &f) in candidates.iter().enumerate() {
        if x.is_binary(f) {
            slot[f] = ci;
        }
    }
    let mut right = vec![(0.0, 0.0, 0usize); candidates.len()];
    for &r in rows {
        for &f in x.active(r) {
            let ci = slot[f as usize];
            if ci != usize::MAX {
                right[ci].0 += g[r];
                right[ci].1 += h[r];
                right[ci].2 += 1;
            }
        }
    }
    let mcw = params.min_child_weight;
    let gain_of = |gl: f64, hl: f64, gr: f64, hr: f64| -> Option<f64> {
        (hl >= mcw && hr >= mcw)
            .then(|| 0.5 * (split_score(gl, hl, params.lambda) + split_score(gr, hr, params.lambda) - parent))
    };
    let mut best: Option<RegSplit> = None;
    let mut consider = |feature: usize, threshold: f64, gain: f64| {
        let floor = best.as_ref().map_or(GAIN_EPS, |b| b.gain + GAIN_EPS);
        if gain > floor {
            best = Some(RegSplit {
                feature,
                threshold,
                gain,
            });
        }
    };
    for (ci, &f) in candidates.iter().enumerate() {
        if x.is_binary(f) {
            let (gr, hr, nr) = right[ci];
            if nr == 0 || nr == rows.len() {
                continue;
            }
            if let Some(gain) = gain_of(gt - gr, ht - hr, gr, hr) {
                consider(f, 0.5, gain);
            }
        } else {
            let mut order = rows.to_vec();
            order.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
            let (mut gl, mut hl) = (0.0, 0.0);
            for pos in 0..order.len().saturating_sub(1) {
                let r = order[pos];
                gl += g[r];
                hl += h[r];
                let (lo, hi) = (x.get(r, f), x.get(order[pos + 1], f));
                if lo == hi {
                    continue;
                }
                if let Some(gain) = gain_of(gl, hl, gt - gl, ht - hl) {
                    consider(f, lo + (hi - lo) / 2.0, gain);
                }
            }
        }
    }
    best
}

fn grow_regression_tree(
    x: &FeatureMatrix,
    rows: &[usize],
    g: &[f64],
    h: &[f64],
    params: &GbmParams,
    n_cols_level: usize,
    rng: &mut StreamRng,
) -> RegTree {
    let d = x.n_cols();
    // column sampling is shared by every node at a given depth
    let levels: Vec<Vec<usize>> = (0..params.max_depth)
        .map(|_| {
            if n_cols_level < d {
                let mut c = rand::seq::index::sample(&mut *rng, d, n_cols_level).into_vec();
                c.sort_unstable();
                c
            } else {
                (0..d).collect()
            }
        })
        .collect();
    let mut nodes = Vec::new();
    grow_node(x, rows.to_vec(), 0, g, h, params, &levels, &mut nodes);
    RegTree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn grow_node(
    x: &FeatureMatrix,
    rows: Vec<usize>,
    depth: usize,
    g: &[f64],
    h: &[f64],
    params: &GbmParams,
    levels: &[Vec<usize>],
    nodes: &mut Vec<RegNode>,
) -> u32 {
    let id = nodes.len();
    nodes.push(RegNode::Leaf { value: 0.0 });
    let (gt, ht) = rows.iter().fold((0.0, 0.0), |(a, b), &r| (a + g[r], b + h[r]));
    if depth < params.max_depth && rows.len() >= 2 {
        if let Some(split) = best_regression_split(x, &rows, g, h, &levels[depth], params) {
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| x.get(i, split.feature) <= split.threshold);
            let left = grow_node(x, l, depth + 1, g, h, params, levels, nodes);
            let right = grow_node(x, r, depth + 1, g, h, params, levels, nodes);
            nodes[id] = RegNode::Split {
                feature: split.feature as u32,
                threshold: split.threshold,
                left,
                right,
                gain: split.gain,
                cover: ht,
            };
            return id as u32;
        }
    }
    let denom = ht + params.lambda;
    let value = if denom > 0.0 {
        -gt / denom * params.learning_rate
    } else {
        0.0
    };
    nodes[id] = RegNode::Leaf { value };
    id as u32
}

/// Split gain times node hessian cover, summed per feature over the trees
/// used for prediction and averaged over those trees.
pub fn gain_importance(model: &GbmModel) -> Importance {
    let mut raw = vec![0.0; model.n_features];
    let mut n_trees = 0usize;
    for round in &model.rounds[..model.best_round] {
        for tree in round {
            n_trees += 1;
            for node in &tree.nodes {
                if let RegNode::Split {
                    feature, gain, cover, ..
                } = node
                {
                    raw[*feature as usize] += gain * cover;
                }
            }
        }
    }
    if n_trees > 0 {
        raw.iter_mut().for_each(|v| *v /= n_trees as f64);
    }
    Importance::from_raw(raw)
}
