//! Bagged CART ensembles with per-split feature sampling (random forest),
//! out-of-bag bookkeeping and OOB permutation importance.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassWeights;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::tree::{argmax, fit_tree_on_rows, TrainingSet, Tree, TreeParams};

/// How tree outputs are aggregated into a class distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    /// Share of trees voting for each class.
    #[default]
    HardVote,
    /// Mean of the trees' leaf distributions.
    MeanDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub ntree: usize,
    pub mtry: usize,
    pub nodesize: usize,
    pub class_weights: Option<ClassWeights>,
    pub seed: u64,
    pub vote: VoteMode,
    pub keep_oob: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            ntree: 500,
            mtry: 10,
            nodesize: 1,
            class_weights: None,
            seed: 0,
            vote: VoteMode::HardVote,
            keep_oob: true,
        }
    }
}

impl ForestParams {
    fn validate(&self, n_features: usize) -> Result<()> {
        if self.ntree == 0 {
            return Err(Error::Config("ntree must be at least 1".into()));
        }
        if self.mtry == 0 || self.mtry > n_features {
            return Err(Error::Config(format!(
                "mtry must be in [1, {n_features}], got {}",
                self.mtry
            )));
        }
        if self.nodesize == 0 {
            return Err(Error::Config("nodesize must be at least 1".into()));
        }
        Ok(())
    }
}

/// A bootstrap draw and its out-of-bag complement.
#[derive(Debug, Clone, PartialEq)]
pub struct Bootstrap {
    /// `n` draws with replacement.
    pub indices: Vec<usize>,
    /// Sorted indices never drawn.
    pub oob: Vec<usize>,
}

pub fn bootstrap_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Bootstrap {
    let mut drawn = vec![false; n];
    let indices: Vec<usize> = (0..n)
        .map(|_| {
            let i = rng.gen_range(0..n);
            drawn[i] = true;
            i
        })
        .collect();
    let oob = (0..n).filter(|&i| !drawn[i]).collect();
    Bootstrap { indices, oob }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    /// Per-tree out-of-bag training rows, when retained.
    pub oob: Option<Vec<Vec<u32>>>,
    pub n_train: usize,
    pub n_classes: usize,
    pub n_features: usize,
    pub params: ForestParams,
}

/// Grows `params.ntree` trees on bootstrap samples. Tree `t` draws from the
/// RNG stream `(seed, t)`, so the model does not depend on thread count.
pub fn fit_forest(data: &TrainingSet<'_>, params: &ForestParams) -> Result<ForestModel> {
    if data.is_empty() {
        return Err(Error::Sizing { needed: 1, got: 0 });
    }
    params.validate(data.x.n_cols())?;
    let tree_params = TreeParams {
        max_depth: None,
        min_leaf: params.nodesize,
        feature_subset_size: Some(params.mtry),
        class_weights: params.class_weights.clone(),
    };
    tree_params.validate(data.x.n_cols(), data.n_classes)?;
    let n = data.len();
    let grown: Vec<(Tree, Vec<u32>)> = (0..params.ntree)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(params.seed, t as u64);
            let sample = bootstrap_sample(n, &mut rng);
            let tree = fit_tree_on_rows(data, &sample.indices, &tree_params, &mut rng)?;
            Ok((tree, sample.oob.into_iter().map(|i| i as u32).collect()))
        })
        .collect::<Result<_>>()?;
    let (trees, oob): (Vec<_>, Vec<_>) = grown.into_iter().unzip();
    Ok(ForestModel {
        trees,
        oob: params.keep_oob.then_some(oob),
        n_train: n,
        n_classes: data.n_classes,
        n_features: data.x.n_cols(),
        params: params.clone(),
    })
}

impl ForestModel {
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.predict_proba_with(x, self.params.vote)
    }

    pub fn predict_proba_with(&self, x: &[f64], mode: VoteMode) -> Vec<f64> {
        let mut out = vec![0.0; self.n_classes];
        for tree in &self.trees {
            let p = tree.predict(x);
            match mode {
                VoteMode::HardVote => out[p.majority] += 1.0,
                VoteMode::MeanDistribution => {
                    for (o, d) in out.iter_mut().zip(p.distribution) {
                        *o += d;
                    }
                }
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }

    fn oob_sets(&self) -> Result<&[Vec<u32>]> {
        self.oob
            .as_deref()
            .ok_or_else(|| Error::Unsupported("forest was trained without out-of-bag retention".into()))
    }

    fn check_training_set(&self, data: &TrainingSet<'_>) -> Result<()> {
        if data.len() != self.n_train || data.x.n_cols() != self.n_features {
            return Err(Error::Alignment(format!(
                "forest was trained on {} x {} rows, got {} x {}",
                self.n_train,
                self.n_features,
                data.len(),
                data.x.n_cols()
            )));
        }
        Ok(())
    }

    /// Hard-vote distribution of each training row over the trees for which
    /// it was out of bag; `None` for rows that were in every bootstrap.
    pub fn oob_votes(&self, data: &TrainingSet<'_>) -> Result<Vec<Option<Vec<f64>>>> {
        let oob = self.oob_sets()?;
        self.check_training_set(data)?;
        let mut votes = vec![vec![0.0; self.n_classes]; self.n_train];
        let mut seen = vec![0usize; self.n_train];
        for (tree, rows) in self.trees.iter().zip(oob) {
            for &r in rows {
                let r = r as usize;
                votes[r][tree.predict_class(data.x.row(r))] += 1.0;
                seen[r] += 1;
            }
        }
        Ok(votes
            .into_iter()
            .zip(seen)
            .map(|(mut v, s)| {
                (s > 0).then(|| {
                    v.iter_mut().for_each(|x| *x /= s as f64);
                    v
                })
            })
            .collect())
    }

    /// Fraction of OOB-covered training rows whose OOB vote is correct.
    pub fn oob_accuracy(&self, data: &TrainingSet<'_>) -> Result<f64> {
        let votes = self.oob_votes(data)?;
        let (mut hit, mut total) = (0usize, 0usize);
        for (r, v) in votes.iter().enumerate() {
            if let Some(v) = v {
                total += 1;
                hit += (argmax(v) == data.y[r]) as usize;
            }
        }
        if total == 0 {
            return Err(Error::Unsupported("no out-of-bag rows".into()));
        }
        Ok(hit as f64 / total as f64)
    }
}

/// Per-feature importance scores, raw and scaled so the maximum is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl Importance {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let max = raw.iter().copied().fold(0.0_f64, f64::max);
        let normalized = if max > 0.0 {
            raw.iter().map(|v| v / max).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Self { raw, normalized }
    }

    /// Feature indices by decreasing raw score, lowest index first on ties.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.raw.len()).collect();
        idx.sort_by(|&a, &b| self.raw[b].total_cmp(&self.raw[a]).then(a.cmp(&b)));
        idx
    }
}

/// OOB permutation importance: for every tree and feature, the tree's error
/// on its OOB rows with that feature's values shuffled among them, minus its
/// error on the intact OOB rows; averaged over trees.
pub fn permutation_importance<R: Rng + ?Sized>(
    model: &ForestModel,
    data: &TrainingSet<'_>,
    rng: &mut R,
) -> Result<Importance> {
    let seed: u64 = rng.gen();
    permutation_importance_by(model, data, seed, |rng, rows| {
        let mut p: Vec<usize> = (0..rows).collect();
        p.shuffle(rng);
        p
    })
}

fn permutation_importance_by<F>(
    model: &ForestModel,
    data: &TrainingSet<'_>,
    seed: u64,
    permuter: F,
) -> Result<Importance>
where
    F: Fn(&mut StreamRng, usize) -> Vec<usize> + Sync,
{
    let oob = model.oob_sets()?;
    model.check_training_set(data)?;
    let d = model.n_features;
    let per_tree: Vec<Option<Vec<f64>>> = model
        .trees
        .par_iter()
        .zip(oob.par_iter())
        .enumerate()
        .map(|(t, (tree, rows))| {
            if rows.is_empty() {
                return None;
            }
            let mut rng = rng::stream(seed, t as u64);
            let m = rows.len() as f64;
            let miss = |row: &[f64], r: usize| (tree.predict_class(row) != data.y[r]) as usize;
            let base = rows
                .iter()
                .map(|&r| miss(data.x.row(r as usize), r as usize))
                .sum::<usize>() as f64
                / m;
            let mut scratch = vec![0.0; d];
            let mut deltas = vec![0.0; d];
            for (f, delta) in deltas.iter_mut().enumerate() {
                let perm = permuter(&mut rng, rows.len());
                let mut wrong = 0usize;
                for (pos, &r) in rows.iter().enumerate() {
                    let r = r as usize;
                    scratch.copy_from_slice(data.x.row(r));
                    scratch[f] = data.x.get(rows[perm[pos]] as usize, f);
                    wrong += miss(&scratch, r);
                }
                *delta = wrong as f64 / m - base;
            }
            Some(deltas)
        })
        .collect();
    let mut raw = vec![0.0; d];
    let mut used = 0usize;
    for deltas in per_tree.into_iter().flatten() {
        used += 1;
        for (acc, v) in raw.iter_mut().zip(deltas) {
            *acc += v;
        }
    }
    if used > 0 {
        raw.iter_mut().for_each(|v| *v /= used as f64);
    }
    Ok(Importance::from_raw(raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::FeatureMatrix;

    fn planted(n: usize, seed: u64) -> (FeatureMatrix, Vec<usize>) {
        let mut rng = rng::seeded(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let mut r: Vec<f64> = (0..6).map(|_| rng.gen_bool(0.3) as u8 as f64).collect();
            r[5] = 0.0; // constant column
            let label = if r[2] == 1.0 { 1 } else { 0 };
            let label = if rng.gen_bool(0.1) { 1 - label } else { label };
            rows.push(r);
            y.push(label);
        }
        (FeatureMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn bootstrap_of_one() {
        let b = bootstrap_sample(1, &mut rng::seeded(3));
        assert_eq!(b.indices, vec![0]);
        assert!(b.oob.is_empty());
    }

    #[test]
    fn hard_votes_split_evenly_between_two_trees() {
        let (x, y) = planted(50, 1);
        let data = TrainingSet::new(&x, &y, 2).unwrap();
        let params = ForestParams {
            ntree: 2,
            mtry: 6,
            ..ForestParams::default()
        };
        let mut model = fit_forest(&data, &params).unwrap();
        // force one tree per class with single-leaf trees
        for (t, tree) in model.trees.iter_mut().enumerate() {
            let mut dist = vec![0.0, 0.0];
            dist[1 - t] = 1.0;
            tree.nodes = vec![crate::tree::TreeNode::Leaf {
                class_counts: dist.clone(),
                majority: (1 - t) as u32,
                distribution: dist,
            }];
        }
        assert_eq!(model.predict_proba(&[0.0; 6]), vec![0.5, 0.5]);
        assert_eq!(model.predict(&[0.0; 6]), 0);
    }

    #[test]
    fn same_seed_same_model() {
        let (x, y) = planted(200, 2);
        let data = TrainingSet::new(&x, &y, 2).unwrap();
        let params = ForestParams {
            ntree: 10,
            mtry: 2,
            seed: 9,
            ..ForestParams::default()
        };
        let a = bincode::serialize(&fit_forest(&data, &params).unwrap()).unwrap();
        let b = bincode::serialize(&fit_forest(&data, &params).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn importance_requires_oob() {
        let (x, y) = planted(100, 3);
        let data = TrainingSet::new(&x, &y, 2).unwrap();
        let params = ForestParams {
            ntree: 5,
            mtry: 3,
            keep_oob: false,
            ..ForestParams::default()
        };
        let model = fit_forest(&data, &params).unwrap();
        assert!(matches!(
            permutation_importance(&model, &data, &mut rng::seeded(0)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn identity_permutation_scores_zero_and_planted_feature_ranks_first() {
        let (x, y) = planted(600, 4);
        let data = TrainingSet::new(&x, &y, 2).unwrap();
        let params = ForestParams {
            ntree: 30,
            mtry: 3,
            seed: 5,
            ..ForestParams::default()
        };
        let model = fit_forest(&data, &params).unwrap();
        let ident = permutation_importance_by(&model, &data, 0, |_, n| (0..n).collect()).unwrap();
        assert!(ident.raw.iter().all(|&v| v == 0.0));
        let imp = permutation_importance(&model, &data, &mut rng::seeded(1)).unwrap();
        assert_eq!(imp.ranking()[0], 2);
        assert_eq!(imp.raw[5], 0.0);
        assert_eq!(imp.normalized[2], 1.0);
    }

    #[test]
    fn vote_shares_match_manual_tally() {
        let (x, y) = planted(300, 6);
        let data = TrainingSet::new(&x, &y, 2).unwrap();
        let params = ForestParams {
            ntree: 15,
            mtry: 2,
            seed: 1,
            ..ForestParams::default()
        };
        let model = fit_forest(&data, &params).unwrap();
        for i in 0..20 {
            let row = x.row(i);
            let mut tally = [0usize; 2];
            for t in &model.trees {
                tally[t.predict_class(row)] += 1;
            }
            let p = model.predict_proba(row);
            assert_eq!(p[0], tally[0] as f64 / 15.0);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
