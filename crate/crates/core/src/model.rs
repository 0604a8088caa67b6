//! One interface over both trainers, so the workflow does not care which
//! algorithm it debugs.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::gbdt::{gbdt_classify, train_gbdt, GbdtHyper, GbdtModel, GbdtProfile};
use crate::logreg::{lr_classify, train_lr, LrHyper, LrModel, LrProfile};
use crate::surrogate::{build_gbdt_surrogate, build_lr_surrogate, LinearSurrogate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Lr,
    Gbdt,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Lr => "lr",
            Algorithm::Gbdt => "gbdt",
        })
    }
}

/// An algorithm with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "algorithm")]
pub enum Learner {
    Lr(LrHyper),
    Gbdt(GbdtHyper),
}

impl Learner {
    pub fn default_for(algorithm: Algorithm) -> Learner {
        match algorithm {
            Algorithm::Lr => Learner::Lr(LrHyper::default()),
            Algorithm::Gbdt => Learner::Gbdt(GbdtHyper::default()),
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Learner::Lr(_) => Algorithm::Lr,
            Learner::Gbdt(_) => Algorithm::Gbdt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Learner::Lr(h) => h.validate(),
            Learner::Gbdt(h) => h.validate(),
        }
    }

    pub fn train(&self, train: &Dataset) -> Result<Trained> {
        Ok(match self {
            Learner::Lr(h) => {
                let (model, profile) = train_lr(train, h)?;
                Trained::Lr { model, profile }
            }
            Learner::Gbdt(h) => {
                let (model, profile) = train_gbdt(train, h)?;
                Trained::Gbdt { model, profile }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "algorithm")]
pub enum Trained {
    Lr {
        model: LrModel,
        profile: LrProfile,
    },
    Gbdt {
        model: GbdtModel,
        profile: GbdtProfile,
    },
}

impl Trained {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            Trained::Lr { .. } => Algorithm::Lr,
            Trained::Gbdt { .. } => Algorithm::Gbdt,
        }
    }

    pub fn classify(&self, x: &[f64]) -> Result<Label> {
        match self {
            Trained::Lr { model, .. } => lr_classify(model, x),
            Trained::Gbdt { model, .. } => gbdt_classify(model, x),
        }
    }

    /// Indices of `ds` the model gets wrong.
    pub fn errors(&self, ds: &Dataset) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (i, p) in ds.points().iter().enumerate() {
            if self.classify(&p.features)? != p.label {
                out.push(i);
            }
        }
        Ok(out)
    }

    /// Fraction of `ds` misclassified; 0 for an empty set.
    pub fn error_rate(&self, ds: &Dataset) -> Result<f64> {
        if ds.is_empty() {
            return Ok(0.0);
        }
        Ok(self.errors(ds)?.len() as f64 / ds.len() as f64)
    }

    /// Surrogate for test point `x` over the labels of `train`, the set this
    /// model was trained on.
    pub fn surrogate(
        &self,
        train: &Dataset,
        x: &[f64],
        test_index: usize,
        expected_label: Label,
    ) -> Result<LinearSurrogate> {
        let n = match self {
            Trained::Lr { profile, .. } => profile.labels.len(),
            Trained::Gbdt { profile, .. } => profile.labels.len(),
        };
        if n != train.len() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: train.len(),
            });
        }
        match self {
            Trained::Lr { profile, .. } => {
                build_lr_surrogate(profile, train, x, test_index, expected_label)
            }
            Trained::Gbdt { profile, .. } => {
                build_gbdt_surrogate(profile, x, test_index, expected_label)
            }
        }
    }
}
