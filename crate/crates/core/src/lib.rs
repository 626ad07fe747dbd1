//! Attribute-based safety outcome prediction.
//!
//! The pipeline turns free-text incident narratives into binary attribute
//! vectors ([`extract`]), then predicts categorical outcomes with CART trees,
//! random forests, gradient-boosted trees, one-vs-rest linear SVMs and a
//! logistic-regression stack over the two tree ensembles. [`synth`] provides
//! a seeded corpus generator with a known Bayes-optimal classifier so every
//! model can be checked against ground truth.

pub mod container;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod extract;
pub mod forest;
pub mod gbm;
pub mod matrix;
pub mod model;
pub mod report;
pub mod rng;
pub mod stack;
pub mod svm;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
