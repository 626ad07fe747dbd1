//! Family-independent configuration and trained-model wrappers.

use serde::{Deserialize, Serialize};

use crate::dataset::ClassWeights;
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestModel, ForestParams};
use crate::gbm::{fit_gbm, GbmModel, GbmParams};
use crate::svm::{fit_linear_svm, SvmModel, SvmParams};
use crate::tree::TrainingSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Forest,
    Gbm,
    Svm,
    Stack,
}

impl Family {
    /// Row label used in metrics reports.
    pub fn report_label(self) -> &'static str {
        match self {
            Family::Forest => "RF",
            Family::Gbm => "XGB",
            Family::Svm => "SVM",
            Family::Stack => "XGB+RF",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "forest" | "rf" => Ok(Family::Forest),
            "gbm" | "xgb" => Ok(Family::Gbm),
            "svm" => Ok(Family::Svm),
            "stack" => Ok(Family::Stack),
            _ => Err(Error::Config(format!("unknown model family `{s}`"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Forest => "forest",
            Family::Gbm => "gbm",
            Family::Svm => "svm",
            Family::Stack => "stack",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelConfig {
    Forest(ForestParams),
    Gbm(GbmParams),
    Svm(SvmParams),
}

impl ModelConfig {
    pub fn family(&self) -> Family {
        match self {
            ModelConfig::Forest(_) => Family::Forest,
            ModelConfig::Gbm(_) => Family::Gbm,
            ModelConfig::Svm(_) => Family::Svm,
        }
    }

    pub fn with_class_weights(mut self, w: Option<ClassWeights>) -> Self {
        match &mut self {
            ModelConfig::Forest(p) => p.class_weights = w,
            ModelConfig::Gbm(p) => p.class_weights = w,
            ModelConfig::Svm(p) => p.class_weights = w,
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            ModelConfig::Forest(p) => p.seed = seed,
            ModelConfig::Gbm(p) => p.seed = seed,
            ModelConfig::Svm(p) => p.seed = seed,
        }
        self
    }

    /// Tuned hyperparameters as `(name, value)` pairs, for report columns.
    pub fn describe(&self) -> Vec<(&'static str, String)> {
        match self {
            ModelConfig::Forest(p) => vec![
                ("ntree", p.ntree.to_string()),
                ("mtry", p.mtry.to_string()),
                ("nodesize", p.nodesize.to_string()),
            ],
            ModelConfig::Gbm(p) => vec![
                ("max_depth", p.max_depth.to_string()),
                ("learning_rate", p.learning_rate.to_string()),
                ("min_child_weight", p.min_child_weight.to_string()),
                ("subsample", p.subsample.to_string()),
                ("colsample_bylevel", p.colsample_bylevel.to_string()),
            ],
            ModelConfig::Svm(p) => vec![("C", format!("{:e}", p.c))],
        }
    }

    /// Trains on `train`; gbm uses `val` for early stopping.
    pub fn fit(&self, train: &TrainingSet<'_>, val: Option<&TrainingSet<'_>>, categories: &[String]) -> Result<Model> {
        Ok(match self {
            ModelConfig::Forest(p) => Model::Forest(fit_forest(train, p)?),
            ModelConfig::Gbm(p) => Model::Gbm(fit_gbm(train, val, p)?),
            ModelConfig::Svm(p) => Model::Svm(fit_linear_svm(train, p, categories)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Forest(ForestModel),
    Gbm(GbmModel),
    Svm(SvmModel),
}

impl Model {
    pub fn family(&self) -> Family {
        match self {
            Model::Forest(_) => Family::Forest,
            Model::Gbm(_) => Family::Gbm,
            Model::Svm(_) => Family::Svm,
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        match self {
            Model::Forest(m) => m.predict(x),
            Model::Gbm(m) => m.predict(x),
            Model::Svm(m) => m.predict(x),
        }
    }

    /// Class distribution; the SVM yields a one-hot of its prediction.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Model::Forest(m) => m.predict_proba(x),
            Model::Gbm(m) => m.predict_proba(x),
            Model::Svm(m) => m.predict_one_hot(x),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Forest(m) => m.n_features,
            Model::Gbm(m) => m.n_features,
            Model::Svm(m) => m.n_features,
        }
    }
}

/// Feature matrix and label indices of one partition, ready for fitting.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub x: crate::matrix::FeatureMatrix,
    pub y: Vec<usize>,
    pub n_classes: usize,
}

impl LabeledSet {
    pub fn from_examples(examples: &[crate::dataset::Example], n_classes: usize) -> Self {
        Self {
            x: crate::matrix::FeatureMatrix::from_examples(examples),
            y: examples.iter().map(|e| e.label).collect(),
            n_classes,
        }
    }

    pub fn view(&self) -> Result<TrainingSet<'_>> {
        TrainingSet::new(&self.x, &self.y, self.n_classes)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn predict_with(&self, model: &Model) -> Vec<usize> {
        (0..self.len()).map(|i| model.predict(self.x.row(i))).collect()
    }
}
