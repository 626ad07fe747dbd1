//! Confusion matrices, per-class precision / recall / F1, the random
//! baseline and hyperparameter grid search.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::gbm::GbmParams;
use crate::model::ModelConfig;
use crate::rng;
use crate::svm::{default_c_grid, SvmParams};
use crate::tree::TrainingSet;

/// `counts[i][j]`: cases of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Alignment(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for idx in [t, p] {
            if idx >= k {
                return Err(Error::LabelOutOfRange { index: idx, classes: k });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.n_classes()).map(|i| self.counts[i][i]).sum();
        ratio(diag as f64, self.total() as f64)
    }

    /// Pooled recall over all classes.
    pub fn micro_recall(&self) -> f64 {
        let tp: u64 = (0..self.n_classes()).map(|i| self.counts[i][i]).sum();
        let rows: u64 = (0..self.n_classes()).map(|i| self.row_sum(i)).sum();
        ratio(tp as f64, rows as f64)
    }

    fn add(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Zero denominators give zero.
fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision == 0.0 || recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision from column sums, recall from row sums, F1 as their harmonic
/// mean; macro values are unweighted means over classes.
pub fn precision_recall_f1(c: &ConfusionMatrix) -> ClassScores {
    let k = c.n_classes();
    let precision: Vec<f64> = (0..k)
        .map(|i| ratio(c.counts[i][i] as f64, c.col_sum(i) as f64))
        .collect();
    let recall: Vec<f64> = (0..k)
        .map(|i| ratio(c.counts[i][i] as f64, c.row_sum(i) as f64))
        .collect();
    let f1: Vec<f64> = precision.iter().zip(&recall).map(|(&p, &r)| f1_score(p, r)).collect();
    let mean = |v: &[f64]| if k == 0 { 0.0 } else { v.iter().sum::<f64>() / k as f64 };
    ClassScores {
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
    }
}

pub fn evaluate(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ClassScores> {
    Ok(precision_recall_f1(&confusion_matrix(y_true, y_pred, k)?))
}

/// Scores of a classifier that samples each prediction in proportion to
/// the training label counts. Confusion counts are pooled over `trials`
/// independent draws of the whole test set.
pub fn random_baseline(
    train_label_counts: &[u64],
    test_labels: &[usize],
    seed: u64,
    trials: usize,
) -> Result<ClassScores> {
    let k = train_label_counts.len();
    if train_label_counts.iter().all(|&c| c == 0) {
        return Err(Error::Config("random baseline needs nonzero training counts".into()));
    }
    if trials == 0 {
        return Err(Error::Config("random baseline needs at least one trial".into()));
    }
    let dist =
        WeightedIndex::new(train_label_counts).map_err(|e| Error::Config(format!("random baseline weights: {e}")))?;
    let pooled = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, t as u64);
            let pred: Vec<usize> = test_labels.iter().map(|_| dist.sample(&mut rng)).collect();
            confusion_matrix(test_labels, &pred, k)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(
            ConfusionMatrix {
                counts: vec![vec![0; k]; k],
            },
            |mut acc, m| {
                acc.add(&m);
                acc
            },
        );
    Ok(precision_recall_f1(&pooled))
}

// ---------------------------------------------------------------------------
// Grids

pub const RF_NTREE: [usize; 12] = [100, 200, 300, 400, 500, 600, 700, 800, 900, 1000, 1100, 1200];
pub const RF_MTRY: [usize; 9] = [5, 10, 15, 20, 25, 30, 35, 40, 45];
pub const RF_NODESIZE: [usize; 4] = [1, 2, 5, 10];
pub const GBM_MAX_DEPTH: [usize; 4] = [3, 4, 5, 6];
pub const GBM_LEARNING_RATE: [f64; 3] = [0.01, 0.05, 0.1];
pub const GBM_MIN_CHILD_WEIGHT: [f64; 3] = [1.0, 3.0, 5.0];
pub const GBM_SUBSAMPLE: [f64; 4] = [0.3, 0.5, 0.7, 1.0];
pub const GBM_COLSAMPLE_BYLEVEL: [f64; 4] = [0.3, 0.5, 0.7, 1.0];

/// Cartesian product grid over forest hyperparameters (ntree outermost).
pub fn forest_grid(base: &ForestParams, ntree: &[usize], mtry: &[usize], nodesize: &[usize]) -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for &nt in ntree {
        for &m in mtry {
            for &ns in nodesize {
                out.push(ModelConfig::Forest(ForestParams {
                    ntree: nt,
                    mtry: m,
                    nodesize: ns,
                    ..base.clone()
                }));
            }
        }
    }
    out
}

pub fn default_forest_grid(base: &ForestParams) -> Vec<ModelConfig> {
    forest_grid(base, &RF_NTREE, &RF_MTRY, &RF_NODESIZE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmAxes {
    pub max_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub min_child_weight: Vec<f64>,
    pub subsample: Vec<f64>,
    pub colsample_bylevel: Vec<f64>,
}

impl Default for GbmAxes {
    fn default() -> Self {
        Self {
            max_depth: GBM_MAX_DEPTH.to_vec(),
            learning_rate: GBM_LEARNING_RATE.to_vec(),
            min_child_weight: GBM_MIN_CHILD_WEIGHT.to_vec(),
            subsample: GBM_SUBSAMPLE.to_vec(),
            colsample_bylevel: GBM_COLSAMPLE_BYLEVEL.to_vec(),
        }
    }
}

pub fn gbm_grid(base: &GbmParams, axes: &GbmAxes) -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for &md in &axes.max_depth {
        for &lr in &axes.learning_rate {
            for &mcw in &axes.min_child_weight {
                for &ss in &axes.subsample {
                    for &cs in &axes.colsample_bylevel {
                        out.push(ModelConfig::Gbm(GbmParams {
                            max_depth: md,
                            learning_rate: lr,
                            min_child_weight: mcw,
                            subsample: ss,
                            colsample_bylevel: cs,
                            ..base.clone()
                        }));
                    }
                }
            }
        }
    }
    out
}

pub fn svm_grid(base: &SvmParams, cs: &[f64]) -> Vec<ModelConfig> {
    cs.iter()
        .map(|&c| ModelConfig::Svm(SvmParams { c, ..base.clone() }))
        .collect()
}

pub fn default_svm_grid(base: &SvmParams) -> Vec<ModelConfig> {
    svm_grid(base, &default_c_grid())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub config: ModelConfig,
    /// `None` when training failed.
    pub val_macro_f1: Option<f64>,
    pub error: Option<String>,
    /// 1-based; `None` for failed rows.
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    /// In grid order.
    pub rows: Vec<GridRow>,
    pub best: Option<usize>,
}

impl GridSearchResult {
    pub fn best_config(&self) -> Option<&ModelConfig> {
        self.best.map(|i| &self.rows[i].config)
    }

    /// `params...,val_macro_f1,rank`, one line per configuration in grid order.
    pub fn to_csv(&self) -> String {
        let header: Vec<&str> = self
            .rows
            .first()
            .map(|r| r.config.describe().iter().map(|(k, _)| *k).collect())
            .unwrap_or_default();
        let mut s = header.join(",");
        s.push_str(if header.is_empty() {
            "val_macro_f1,rank\n"
        } else {
            ",val_macro_f1,rank\n"
        });
        for r in &self.rows {
            let vals: Vec<String> = r.config.describe().into_iter().map(|(_, v)| v).collect();
            s.push_str(&vals.join(","));
            s.push(',');
            match r.val_macro_f1 {
                Some(f) => s.push_str(&format!("{f:.6}")),
                None => s.push_str("failed"),
            }
            s.push(',');
            if let Some(rank) = r.rank {
                s.push_str(&rank.to_string());
            }
            s.push('\n');
        }
        s
    }
}

/// Trains every configuration on `train`, scores macro-F1 on `val` and ranks
/// them; ties go to the earlier configuration. Failed configurations are
/// recorded and skipped.
pub fn grid_search(
    configs: &[ModelConfig],
    train: &TrainingSet<'_>,
    val: &TrainingSet<'_>,
    categories: &[String],
) -> Result<GridSearchResult> {
    if configs.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let k = train.n_classes;
    let mut rows: Vec<GridRow> = configs
        .par_iter()
        .map(|cfg| {
            let scored = cfg.fit(train, Some(val), categories).and_then(|model| {
                let pred: Vec<usize> = (0..val.len()).map(|i| model.predict(val.x.row(i))).collect();
                evaluate(val.y, &pred, k)
            });
            match scored {
                Ok(s) => GridRow {
                    config: cfg.clone(),
                    val_macro_f1: Some(s.macro_f1),
                    error: None,
                    rank: None,
                },
                Err(e) => GridRow {
                    config: cfg.clone(),
                    val_macro_f1: None,
                    error: Some(e.to_string()),
                    rank: None,
                },
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].val_macro_f1.is_some()).collect();
    order.sort_by(|&a, &b| {
        rows[b]
            .val_macro_f1
            .unwrap()
            .total_cmp(&rows[a].val_macro_f1.unwrap())
            .then(a.cmp(&b))
    });
    for (rank, &i) in order.iter().enumerate() {
        rows[i].rank = Some(rank + 1);
    }
    Ok(GridSearchResult {
        best: order.first().copied(),
        rows,
    })
}
