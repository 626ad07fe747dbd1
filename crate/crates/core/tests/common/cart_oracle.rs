//! Exhaustive depth-1 split enumeration over small fixtures.

use std::path::{Path, PathBuf};

use precursor::dataset::ClassWeights;
use precursor::matrix::FeatureMatrix;
use precursor::tree::{fit_tree, TrainingSet, TreeNode, TreeParams};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct Fixture {
    pub name: String,
    pub n_classes: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    #[serde(default)]
    pub class_weights: Option<Vec<f64>>,
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/cart")
}

pub fn load_fixtures() -> Vec<Fixture> {
    let mut paths: Vec<_> = std::fs::read_dir(fixture_dir())
        .expect("fixture directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap())
        .collect()
}

fn gini(counts: &[f64]) -> f64 {
    let w: f64 = counts.iter().sum();
    if w == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / w) * (c / w)).sum::<f64>()
}

/// `(feature, threshold)` of the best split, or `None` if nothing gains.
/// Features in index order, thresholds ascending; a later candidate must
/// beat the incumbent by more than 1e-12.
pub fn oracle_split(fx: &Fixture, min_leaf: usize) -> Option<(usize, f64)> {
    let w = |y: usize| fx.class_weights.as_ref().map_or(1.0, |cw| cw[y]);
    let mut parent = vec![0.0; fx.n_classes];
    for &y in &fx.labels {
        parent[y] += w(y);
    }
    let total: f64 = parent.iter().sum();
    let g0 = gini(&parent);
    let d = fx.rows[0].len();
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..d {
        let mut values: Vec<f64> = fx.rows.iter().map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let t = if pair == [0.0, 1.0] {
                0.5
            } else {
                (pair[0] + pair[1]) / 2.0
            };
            let mut l = vec![0.0; fx.n_classes];
            let mut r = vec![0.0; fx.n_classes];
            let (mut nl, mut nr) = (0, 0);
            for (row, &y) in fx.rows.iter().zip(&fx.labels) {
                if row[f] <= t {
                    l[y] += w(y);
                    nl += 1;
                } else {
                    r[y] += w(y);
                    nr += 1;
                }
            }
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let wl: f64 = l.iter().sum();
            let wr: f64 = r.iter().sum();
            let gain = g0 - wl / total * gini(&l) - wr / total * gini(&r);
            let floor = best.map_or(1e-12, |b| b.2 + 1e-12);
            if gain > floor {
                best = Some((f, t, gain));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}

/// Root split chosen by the library's depth-1 tree.
pub fn library_split(fx: &Fixture, min_leaf: usize) -> Option<(usize, f64)> {
    let x = FeatureMatrix::from_rows(&fx.rows).unwrap();
    let data = TrainingSet::new(&x, &fx.labels, fx.n_classes).unwrap();
    let class_weights = fx.class_weights.as_ref().map(|cw| ClassWeights {
        categories: (0..fx.n_classes).map(|k| k.to_string()).collect(),
        counts: vec![1; fx.n_classes],
        weights: cw.clone(),
    });
    let params = TreeParams {
        max_depth: Some(1),
        min_leaf,
        feature_subset_size: None,
        class_weights,
    };
    let tree = fit_tree(&data, &params, &mut precursor::rng::seeded(0)).unwrap();
    match &tree.nodes[0] {
        TreeNode::Split { feature, threshold, .. } => Some((*feature as usize, *threshold)),
        TreeNode::Leaf { .. } => None,
    }
}
