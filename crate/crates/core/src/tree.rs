//! CART classification trees: greedy binary recursive partitioning on the
//! decrease in (class-weighted) Gini impurity.
//!
//! Splits route `x[feature] <= threshold` to the left child. Binary
//! attributes use threshold 0.5, so bit 0 goes left and bit 1 goes right;
//! continuous columns split at midpoints between sorted distinct values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassWeights;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

/// Gains at or below this are treated as zero, and two gains closer than
/// this are treated as tied.
pub const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until purity / `min_leaf` / no positive-gain split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Random-forest style per-split feature sampling.
    pub feature_subset_size: Option<usize>,
    pub class_weights: Option<ClassWeights>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_leaf: 1,
            feature_subset_size: None,
            class_weights: None,
        }
    }
}

impl TreeParams {
    pub fn validate(&self, n_features: usize, n_classes: usize) -> Result<()> {
        if self.max_depth == Some(0) {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        if let Some(m) = self.feature_subset_size {
            if m == 0 || m > n_features {
                return Err(Error::Config(format!(
                    "feature_subset_size must be in [1, {n_features}], got {m}"
                )));
            }
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

/// Feature matrix plus class labels.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSet<'a> {
    pub x: &'a FeatureMatrix,
    pub y: &'a [usize],
    pub n_classes: usize,
}

impl<'a> TrainingSet<'a> {
    pub fn new(x: &'a FeatureMatrix, y: &'a [usize], n_classes: usize) -> Result<Self> {
        if x.n_rows() != y.len() {
            return Err(Error::Alignment(format!("{} rows but {} labels", x.n_rows(), y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::LabelOutOfRange {
                index: bad,
                classes: n_classes,
            });
        }
        Ok(Self { x, y, n_classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// `1 - sum p_k^2` over weight shares.
pub fn gini_impurity(weighted_counts: &[f64]) -> Result<f64> {
    let total: f64 = weighted_counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::UndefinedImpurity);
    }
    Ok(gini_unchecked(weighted_counts, total))
}

fn gini_unchecked(counts: &[f64], total: f64) -> f64 {
    let sum_sq: f64 = counts.iter().map(|&c| (c / total) * (c / total)).sum();
    (1.0 - sum_sq).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Highest-gain split of `rows` over `candidates`.
///
/// Among tied features the first in candidate order wins; within a
/// continuous feature the smallest threshold wins. Returns `None` when no
/// split has positive gain with at least `min_leaf` rows on each side.
pub fn best_split(
    data: &TrainingSet<'_>,
    rows: &[usize],
    sample_weight: &[f64],
    candidates: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let k = data.n_classes;
    let mut total = vec![0.0; k];
    for &r in rows {
        total[data.y[r]] += sample_weight[r];
    }
    let total_w: f64 = total.iter().sum();
    if rows.is_empty() || total_w <= 0.0 {
        return None;
    }
    let parent = gini_unchecked(&total, total_w);
    let n = rows.len();

    let x = data.x;
    let mut slot = vec![usize::MAX; x.n_cols()];
    for (ci, &f) in candidates.iter().enumerate() {
        if x.is_binary(f) {
            slot[f] = ci;
        }
    }
    let mut right_w = vec![0.0; candidates.len() * k];
    let mut right_n = vec![0usize; candidates.len()];
    for &r in rows {
        for &f in x.active(r) {
            let ci = slot[f as usize];
            if ci != usize::MAX {
                right_w[ci * k + data.y[r]] += sample_weight[r];
                right_n[ci] += 1;
            }
        }
    }

    let child_gain = |left: &[f64], right: &[f64]| -> f64 {
        let wl: f64 = left.iter().sum();
        let wr: f64 = right.iter().sum();
        let gl = if wl > 0.0 { gini_unchecked(left, wl) } else { 0.0 };
        let gr = if wr > 0.0 { gini_unchecked(right, wr) } else { 0.0 };
        parent - (wl / total_w) * gl - (wr / total_w) * gr
    };

    let mut best: Option<SplitChoice> = None;
    let mut consider = |choice: SplitChoice| {
        let floor = best.map_or(GAIN_EPS, |b| b.gain + GAIN_EPS);
        if choice.gain > floor {
            best = Some(choice);
        }
    };

    let mut left = vec![0.0; k];
    for (ci, &f) in candidates.iter().enumerate() {
        if x.is_binary(f) {
            let nr = right_n[ci];
            let nl = n - nr;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let right = &right_w[ci * k..(ci + 1) * k];
            for c in 0..k {
                left[c] = (total[c] - right[c]).max(0.0);
            }
            consider(SplitChoice {
                feature: f,
                threshold: 0.5,
                gain: child_gain(&left, right),
            });
        } else {
            let mut order: Vec<usize> = rows.to_vec();
            order.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
            left.iter_mut().for_each(|v| *v = 0.0);
            let mut right = total.clone();
            for pos in 0..n - 1 {
                let r = order[pos];
                left[data.y[r]] += sample_weight[r];
                right[data.y[r]] -= sample_weight[r];
                let (lo, hi) = (x.get(r, f), x.get(order[pos + 1], f));
                if lo == hi || pos + 1 < min_leaf || n - pos - 1 < min_leaf {
                    continue;
                }
                let right_clamped: Vec<f64> = right.iter().map(|v| v.max(0.0)).collect();
                consider(SplitChoice {
                    feature: f,
                    threshold: lo + (hi - lo) / 2.0,
                    gain: child_gain(&left, &right_clamped),
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
        gain: f64,
        /// Training weight reaching this node.
        weight: f64,
    },
    Leaf {
        class_counts: Vec<f64>,
        majority: u32,
        distribution: Vec<f64>,
    },
}

/// Majority category and class distribution of a leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePrediction<'a> {
    pub majority: usize,
    pub distribution: &'a [f64],
}

/// A fitted tree stored as a pre-order node list; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub n_classes: usize,
    pub n_features: usize,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Tree {
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
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
                    };
                }
                TreeNode::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> TreePrediction<'_> {
        match &self.nodes[self.leaf_index(x)] {
            TreeNode::Leaf {
                majority, distribution, ..
            } => TreePrediction {
                majority: *majority as usize,
                distribution,
            },
            TreeNode::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn predict_class(&self, x: &[f64]) -> usize {
        self.predict(x).majority
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Fits a tree on every row of `data`.
pub fn fit_tree<R: Rng + ?Sized>(data: &TrainingSet<'_>, params: &TreeParams, rng: &mut R) -> Result<Tree> {
    let rows: Vec<usize> = (0..data.len()).collect();
    fit_tree_on_rows(data, &rows, params, rng)
}

/// Fits a tree on a multiset of row indices (duplicates count once each).
pub fn fit_tree_on_rows<R: Rng + ?Sized>(
    data: &TrainingSet<'_>,
    rows: &[usize],
    params: &TreeParams,
    rng: &mut R,
) -> Result<Tree> {
    if rows.is_empty() {
        return Err(Error::Sizing { needed: 1, got: 0 });
    }
    params.validate(data.x.n_cols(), data.n_classes)?;
    let sample_weight = match &params.class_weights {
        Some(w) => w.sample_weights(data.y),
        None => vec![1.0; data.len()],
    };
    let mut grower = Grower {
        data,
        params,
        sample_weight: &sample_weight,
        nodes: Vec::new(),
        rng,
    };
    grower.grow(rows.to_vec(), 0);
    Ok(Tree {
        nodes: grower.nodes,
        n_classes: data.n_classes,
        n_features: data.x.n_cols(),
    })
}

struct Grower<'a, 'd, R: Rng + ?Sized> {
    data: &'a TrainingSet<'d>,
    params: &'a TreeParams,
    sample_weight: &'a [f64],
    nodes: Vec<TreeNode>,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Grower<'_, '_, R> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> u32 {
        let k = self.data.n_classes;
        let mut counts = vec![0.0; k];
        for &r in &rows {
            counts[self.data.y[r]] += self.sample_weight[r];
        }
        let total: f64 = counts.iter().sum();
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            class_counts: Vec::new(),
            majority: 0,
            distribution: Vec::new(),
        });

        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        let impure = counts.iter().filter(|&&c| c > 0.0).count() > 1;
        if depth_ok && impure && rows.len() >= 2 * self.params.min_leaf {
            let d = self.data.x.n_cols();
            let candidates: Vec<usize> = match self.params.feature_subset_size {
                Some(m) if m < d => {
                    let mut c = rand::seq::index::sample(&mut *self.rng, d, m).into_vec();
                    c.sort_unstable();
                    c
                }
                _ => (0..d).collect(),
            };
            if let Some(split) = best_split(self.data, &rows, self.sample_weight, &candidates, self.params.min_leaf) {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&r| self.data.x.get(r, split.feature) <= split.threshold);
                drop(rows);
                let left = self.grow(left_rows, depth + 1);
                let right = self.grow(right_rows, depth + 1);
                self.nodes[id] = TreeNode::Split {
                    feature: split.feature as u32,
                    threshold: split.threshold,
                    left,
                    right,
                    gain: split.gain,
                    weight: total,
                };
                return id as u32;
            }
        }

        let distribution: Vec<f64> = counts.iter().map(|c| c / total).collect();
        self.nodes[id] = TreeNode::Leaf {
            majority: argmax(&distribution) as u32,
            class_counts: counts,
            distribution,
        };
        id as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn set(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini_impurity(&[2.0, 2.0]).unwrap(), 0.5);
        assert_eq!(gini_impurity(&[4.0, 0.0]).unwrap(), 0.0);
        let g = gini_impurity(&[1.0, 2.0, 3.0]).unwrap();
        assert!((g - (1.0 - 14.0 / 36.0)).abs() < 1e-15);
        assert!(matches!(gini_impurity(&[0.0, 0.0]), Err(Error::UndefinedImpurity)));
    }

    #[test]
    fn xor_has_no_positive_gain_split() {
        let x = set(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        let y = [0, 1, 1, 0];
        let data = TrainingSet::new(&x, &y, 2).unwrap();
        assert_eq!(best_split(&data, &[0, 1, 2, 3], &[1.0; 4], &[0, 1], 1), None);
    }

    #[test]
    fn perfect_feature_gains_parent_impurity() {
        let x = set(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]]);
        let y = [0, 1, 0, 1];
        let data = TrainingSet::new(&x, &y, 2).unwrap();
        let s = best_split(&data, &[0, 1, 2, 3], &[1.0; 4], &[1, 0], 1).unwrap();
        assert_eq!(s.feature, 0);
        assert!((s.gain - 0.5).abs() < 1e-15);
    }

    #[test]
    fn equal_gain_prefers_first_candidate() {
        // columns 0 and 1 are identical
        let x = set(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0, 1.0]]);
        let y = [0, 1, 0, 1];
        let data = TrainingSet::new(&x, &y, 2).unwrap();
        let rows = [0, 1, 2, 3];
        assert_eq!(best_split(&data, &rows, &[1.0; 4], &[1, 0], 1).unwrap().feature, 1);
        assert_eq!(best_split(&data, &rows, &[1.0; 4], &[0, 1], 1).unwrap().feature, 0);
    }

    #[test]
    fn min_leaf_blocks_small_children() {
        let x = set(&[vec![1.0], vec![0.0], vec![0.0], vec![0.0]]);
        let y = [1, 0, 0, 0];
        let data = TrainingSet::new(&x, &y, 2).unwrap();
        assert!(best_split(&data, &[0, 1, 2, 3], &[1.0; 4], &[0], 1).is_some());
        assert!(best_split(&data, &[0, 1, 2, 3], &[1.0; 4], &[0], 2).is_none());
    }

    #[test]
    fn continuous_feature_splits_at_midpoint() {
        let x = set(&[vec![1.0], vec![2.0], vec![4.0], vec![6.0]]);
        let y = [0, 0, 1, 1];
        let data = TrainingSet::new(&x, &y, 2).unwrap();
        let s = best_split(&data, &[0, 1, 2, 3], &[1.0; 4], &[0], 1).unwrap();
        assert_eq!(s.threshold, 3.0);
        let tree = fit_tree(&data, &TreeParams::default(), &mut rng::seeded(0)).unwrap();
        assert_eq!(tree.predict_class(&[2.9]), 0);
        assert_eq!(tree.predict_class(&[3.1]), 1);
    }

    #[test]
    fn depth_one_tree_has_at_most_three_nodes() {
        let x = set(&[
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        ]);
        let y = [0, 1, 2, 0, 1];
        let data = TrainingSet::new(&x, &y, 3).unwrap();
        let params = TreeParams {
            max_depth: Some(1),
            ..TreeParams::default()
        };
        let tree = fit_tree(&data, &params, &mut rng::seeded(1)).unwrap();
        assert!(tree.nodes.len() <= 3);
        let zero = TreeParams {
            max_depth: Some(0),
            ..TreeParams::default()
        };
        assert!(fit_tree(&data, &zero, &mut rng::seeded(1)).is_err());
    }

    #[test]
    fn single_leaf_predicts_weighted_majority() {
        let x = set(&[vec![1.0], vec![1.0], vec![1.0]]);
        let y = [0, 0, 1];
        let data = TrainingSet::new(&x, &y, 2).unwrap();
        let tree = fit_tree(&data, &TreeParams::default(), &mut rng::seeded(0)).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_class(&[0.0]), 0);
        let weighted = TreeParams {
            class_weights: Some(ClassWeights::from_counts(&["a".into(), "b".into()], &[2, 1]).unwrap()),
            ..TreeParams::default()
        };
        let tree = fit_tree(&data, &weighted, &mut rng::seeded(0)).unwrap();
        // weights 1 and 2: counts 2 vs 2, tie goes to the lower index
        assert_eq!(tree.predict(&[1.0]).distribution, &[0.5, 0.5]);
        assert_eq!(tree.predict_class(&[1.0]), 0);
    }

    #[test]
    fn separable_attribute_gives_depth_one_perfect_tree() {
        let x = set(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 1.0],
        ]);
        let y = [0, 1, 0, 1];
        let data = TrainingSet::new(&x, &y, 2).unwrap();
        let tree = fit_tree(&data, &TreeParams::default(), &mut rng::seeded(0)).unwrap();
        assert_eq!(tree.depth(), 1);
        for (i, &label) in y.iter().enumerate() {
            assert_eq!(tree.predict_class(x.row(i)), label);
        }
        assert_eq!(tree.predict_class(&[1.0, 0.0, 0.0]), 1);
    }
}
