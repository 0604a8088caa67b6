//! Finds the training labels most likely responsible for a test error.
//!
//! A trained model is reduced to a linear function of the training labels
//! (a surrogate) for each test point. Counterfactual worlds are then sampled
//! over the labels and each label is scored by its probability of sufficiency:
//! how often restoring that label alone brings the error back.

pub mod dataset;
pub mod document;
pub mod engine;
pub mod error;
pub mod gbdt;
pub mod harness;
pub mod logreg;
pub mod model;
pub mod surrogate;

pub use error::{Error, Result};
