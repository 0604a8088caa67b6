//! Full-batch gradient-ascent logistic regression with last-step profiling.
//!
//! The trainer maximizes the mean log-likelihood `(1/N) Σ log h(y·θᵀx)` from
//! `θ⁰ = 0` with a fixed step size. The final update is recorded in an
//! [`LrProfile`] so that
//!
//! ```text
//! θᴷ = decay·θᴷ⁻¹ + alpha_last · Σᵢ yᵢ gᵢ xᵢ,    gᵢ = h(−yᵢ θᴷ⁻¹·xᵢ)
//! ```
//!
//! holds exactly, which is what the label surrogate relies on.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrHyper {
    pub iterations: usize,
    pub step_size: f64,
    #[serde(default)]
    pub l2_penalty: f64,
}

impl Default for LrHyper {
    fn default() -> Self {
        Self {
            iterations: 100,
            step_size: 0.1,
            l2_penalty: 0.0,
        }
    }
}

impl LrHyper {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 2 {
            return Err(invalid("logistic regression needs at least 2 iterations"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid("step size must be positive"));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(invalid("l2 penalty must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub theta: Vec<f64>,
}

/// Quantities of the last gradient step, enough to replay it under relabeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrProfile {
    /// θᴷ⁻¹.
    pub theta_prev: Vec<f64>,
    /// Effective multiplier of the label-weighted sum in the last step.
    pub alpha_last: f64,
    /// Shrink factor applied to θᴷ⁻¹ by the L2 penalty; 1 without penalty.
    #[serde(default = "one")]
    pub decay: f64,
    /// gᵢ = h(−yᵢ θᴷ⁻¹·xᵢ).
    pub g: Vec<f64>,
    pub labels: Vec<Label>,
}

fn one() -> f64 {
    1.0
}

impl LrProfile {
    /// θᴷ recomputed from the recorded last step for the given labels.
    pub fn replay(&self, train: &Dataset, labels: &[Label]) -> Result<Vec<f64>> {
        if labels.len() != self.g.len() || train.len() != self.g.len() {
            return Err(invalid("profile, dataset and labels disagree in length"));
        }
        let mut theta: Vec<f64> = self.theta_prev.iter().map(|t| self.decay * t).collect();
        for (i, (&gi, &yi)) in self.g.iter().zip(labels).enumerate() {
            let c = self.alpha_last * yi.sign() * gi;
            for (t, x) in theta.iter_mut().zip(train.features(i)) {
                *t += c * x;
            }
        }
        Ok(theta)
    }
}

/// Logistic sigmoid `1 / (1 + e^{-z})`, stable for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log h(z)`, stable for large `|z|`.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-likelihood `Σ log h(yᵢ θ·xᵢ)` (summed, not averaged).
pub fn log_likelihood(ds: &Dataset, theta: &[f64]) -> f64 {
    ds.points()
        .iter()
        .map(|p| log_sigmoid(p.label.sign() * dot(theta, &p.features)))
        .sum()
}

/// Gradient of [`log_likelihood`]: `Σ yᵢ xᵢ h(−yᵢ θ·xᵢ)`.
pub fn log_likelihood_gradient(ds: &Dataset, theta: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; ds.dim()];
    for p in ds.points() {
        let y = p.label.sign();
        let w = y * sigmoid(-y * dot(theta, &p.features));
        for (g, x) in grad.iter_mut().zip(&p.features) {
            *g += w * x;
        }
    }
    grad
}

pub fn train_lr(train: &Dataset, hyper: &LrHyper) -> Result<(LrModel, LrProfile)> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    let n = train.len();
    let dim = train.dim();
    let alpha = hyper.step_size / n as f64;
    let decay = 1.0 - hyper.step_size * hyper.l2_penalty;
    let labels = train.labels();

    let mut theta = vec![0.0; dim];
    let mut g = vec![0.0; n];
    let mut theta_prev = theta.clone();
    for iteration in 1..=hyper.iterations {
        for (i, p) in train.points().iter().enumerate() {
            g[i] = sigmoid(-p.label.sign() * dot(&theta, &p.features));
        }
        let mut next: Vec<f64> = theta.iter().map(|t| decay * t).collect();
        for (i, p) in train.points().iter().enumerate() {
            let c = alpha * p.label.sign() * g[i];
            for (t, x) in next.iter_mut().zip(&p.features) {
                *t += c * x;
            }
        }
        if next.iter().any(|t| !t.is_finite()) {
            return Err(Error::Divergence { iteration });
        }
        theta_prev = std::mem::replace(&mut theta, next);
    }

    let profile = LrProfile {
        theta_prev,
        alpha_last: alpha,
        decay,
        g,
        labels,
    };
    Ok((LrModel { theta }, profile))
}

impl LrModel {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta.len(),
                got: x.len(),
            });
        }
        Ok(dot(&self.theta, x))
    }
}

/// `+1` iff `θ·x ≥ 0`.
pub fn lr_classify(model: &LrModel, x: &[f64]) -> Result<Label> {
    Ok(Label::from_score(model.score(x)?))
}

/// Number of misclassified points of `test`.
pub fn evaluation_score(model: &LrModel, test: &Dataset) -> Result<usize> {
    let mut errors = 0;
    for p in test.points() {
        if lr_classify(model, &p.features)? != p.label {
            errors += 1;
        }
    }
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_2gauss, LabeledPoint};

    #[test]
    fn sigmoid_identities() {
        assert_eq!(sigmoid(0.0), 0.5);
        for z in [0.1, 3.0, 50.0] {
            assert!((sigmoid(-z) + sigmoid(z) - 1.0).abs() < 1e-15);
        }
        assert!((sigmoid(40.0) - 1.0).abs() < 1e-12);
        assert!(sigmoid(700.0).is_finite() && sigmoid(-700.0) >= 0.0);
        assert!(sigmoid(-700.0) > 0.0);
        assert!((log_sigmoid(-700.0) + 700.0).abs() < 1e-9);
    }

    #[test]
    fn two_hand_executed_steps() {
        let ds = Dataset::new(1, vec![LabeledPoint::new(vec![1.0], Label::Pos).unwrap()]).unwrap();
        let hyper = LrHyper {
            iterations: 2,
            step_size: 1.0,
            l2_penalty: 0.0,
        };
        let (model, profile) = train_lr(&ds, &hyper).unwrap();
        // θ¹ = 0 + 1·h(0)·1 = 0.5; θ² = θ¹ + h(−0.5).
        let g1 = 1.0 / (1.0 + 0.5f64.exp());
        assert_eq!(profile.theta_prev, vec![0.5]);
        assert!((profile.g[0] - g1).abs() < 1e-15);
        assert!((model.theta[0] - (0.5 + g1)).abs() < 1e-15);
    }

    #[test]
    fn separable_training_accuracy() {
        let ds = gen_2gauss(200, 6.0, 11).unwrap();
        let (model, _) = train_lr(&ds, &LrHyper::default()).unwrap();
        let errs = evaluation_score(&model, &ds).unwrap();
        assert!(errs as f64 / 200.0 <= 0.02, "{errs} training errors");
    }

    #[test]
    fn all_positive_labels_push_mean_score_up() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![2.0 + 0.1 * i as f64, 1.0 - 0.05 * i as f64])
            .collect();
        let ds = Dataset::from_rows(rows, vec![Label::Pos; 20]).unwrap();
        let mean = [
            ds.points().iter().map(|p| p.features[0]).sum::<f64>() / 20.0,
            ds.points().iter().map(|p| p.features[1]).sum::<f64>() / 20.0,
        ];
        let mut last = f64::NEG_INFINITY;
        for k in 2..30 {
            let hyper = LrHyper {
                iterations: k,
                ..LrHyper::default()
            };
            let (m, _) = train_lr(&ds, &hyper).unwrap();
            let s = dot(&m.theta, &mean);
            assert!(s > last, "score did not grow at K={k}");
            last = s;
        }
    }

    #[test]
    fn classify_tie_and_sign() {
        let m = LrModel {
            theta: vec![1.0, 0.0],
        };
        assert_eq!(lr_classify(&m, &[0.0, 5.0]).unwrap(), Label::Pos);
        assert_eq!(lr_classify(&m, &[-2.0, 0.0]).unwrap(), Label::Neg);
        assert!(matches!(
            lr_classify(&m, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        for x in [[0.3, 1.0], [-0.2, 4.0], [1e-9, 0.0]] {
            let pos = sigmoid(dot(&m.theta, &x)) >= 0.5;
            assert_eq!(lr_classify(&m, &x).unwrap() == Label::Pos, pos);
        }
    }

    #[test]
    fn evaluation_score_counts() {
        let m = LrModel {
            theta: vec![1.0, 0.0],
        };
        let empty = Dataset::new(2, vec![]).unwrap();
        assert_eq!(evaluation_score(&m, &empty).unwrap(), 0);
        let ds = Dataset::from_rows(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![2.0, 1.0]],
            vec![Label::Pos, Label::Neg, Label::Neg],
        )
        .unwrap();
        assert_eq!(evaluation_score(&m, &ds).unwrap(), 1);
    }

    #[test]
    fn reconstruction_identity_with_and_without_penalty() {
        let ds = gen_2gauss(150, 3.0, 2).unwrap();
        for l2 in [0.0, 0.05] {
            let hyper = LrHyper {
                l2_penalty: l2,
                ..LrHyper::default()
            };
            let (model, profile) = train_lr(&ds, &hyper).unwrap();
            let replayed = profile.replay(&ds, &profile.labels).unwrap();
            for (a, b) in replayed.iter().zip(&model.theta) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
            assert!(profile.g.iter().all(|&g| g > 0.0 && g < 1.0));
        }
    }

    #[test]
    fn training_is_deterministic_and_validates() {
        let ds = gen_2gauss(100, 4.0, 8).unwrap();
        let a = train_lr(&ds, &LrHyper::default()).unwrap();
        let b = train_lr(&ds, &LrHyper::default()).unwrap();
        assert_eq!(a, b);
        let bad = LrHyper {
            iterations: 1,
            ..LrHyper::default()
        };
        assert!(train_lr(&ds, &bad).is_err());
        assert!(train_lr(&Dataset::new(2, vec![]).unwrap(), &LrHyper::default()).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let ds = Dataset::from_rows(vec![vec![1e300]], vec![Label::Pos]).unwrap();
        let hyper = LrHyper {
            iterations: 5,
            step_size: 1e10,
            l2_penalty: 0.0,
        };
        assert!(matches!(
            train_lr(&ds, &hyper),
            Err(Error::Divergence { .. })
        ));
    }
}
