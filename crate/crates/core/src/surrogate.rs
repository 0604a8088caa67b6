//! Affine label surrogates.
//!
//! For one test point, a [`LinearSurrogate`] maps a labeling `Y` of the
//! training set to a margin `b0 + Σᵢ wᵢYᵢ` whose sign stands in for the
//! decision the retrained classifier would make. At the observed labels the
//! margin reproduces the trained model's score, so the decision there is the
//! real one.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{invalid, Error, Result};
use crate::gbdt::{gbdt_score, GbdtProfile, DEGENERATE_DENOMINATOR};
use crate::logreg::{dot, LrProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "storage")]
pub enum Coefficients {
    Dense {
        values: Vec<f64>,
    },
    /// Entries sorted by index, zeros omitted.
    Sparse {
        len: usize,
        entries: Vec<(usize, f64)>,
    },
}

impl Coefficients {
    pub fn len(&self) -> usize {
        match self {
            Coefficients::Dense { values } => values.len(),
            Coefficients::Sparse { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> f64 {
        match self {
            Coefficients::Dense { values } => values[i],
            Coefficients::Sparse { entries, .. } => entries
                .binary_search_by_key(&i, |e| e.0)
                .map(|k| entries[k].1)
                .unwrap_or(0.0),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            Coefficients::Dense { values } => values.clone(),
            Coefficients::Sparse { len, entries } => {
                let mut out = vec![0.0; *len];
                for &(i, w) in entries {
                    out[i] = w;
                }
                out
            }
        }
    }

    /// `(index, weight)` for every stored weight.
    pub fn iter(&self) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match self {
            Coefficients::Dense { values } => Box::new(values.iter().copied().enumerate()),
            Coefficients::Sparse { entries, .. } => Box::new(entries.iter().copied()),
        }
    }
}

/// Affine function of the training labels for one test point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSurrogate {
    pub test_index: usize,
    pub bias: f64,
    pub coeffs: Coefficients,
    /// True label of the test point; the error is any other decision.
    pub expected_label: Label,
}

/// The new margin after flipping the label currently at `current`.
pub fn flipped_margin(margin: f64, weight: f64, current: Label) -> f64 {
    margin - 2.0 * current.sign() * weight
}

impl LinearSurrogate {
    pub fn num_labels(&self) -> usize {
        self.coeffs.len()
    }

    fn check_world(&self, world: &[Label]) -> Result<()> {
        if world.len() != self.num_labels() {
            return Err(invalid(format!(
                "world has {} labels, surrogate expects {}",
                world.len(),
                self.num_labels()
            )));
        }
        Ok(())
    }

    /// `b0 + Σ wᵢYᵢ`.
    pub fn margin(&self, world: &[Label]) -> Result<f64> {
        self.check_world(world)?;
        Ok(self.bias
            + self
                .coeffs
                .iter()
                .map(|(i, w)| w * world[i].sign())
                .sum::<f64>())
    }

    pub fn decision(&self, world: &[Label]) -> Result<Label> {
        Ok(Label::from_score(self.margin(world)?))
    }

    pub fn misclassifies(&self, world: &[Label]) -> Result<bool> {
        Ok(self.decision(world)? != self.expected_label)
    }

    pub fn misclassified_at(&self, margin: f64) -> bool {
        Label::from_score(margin) != self.expected_label
    }

    /// Margin after flipping label `i` of `world`, given the margin `m` of
    /// `world` itself.
    pub fn flip_delta(&self, m: f64, i: usize, world: &[Label]) -> Result<f64> {
        let current = *world.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: world.len(),
        })?;
        if i >= self.num_labels() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.num_labels(),
            });
        }
        Ok(flipped_margin(m, self.coeffs.get(i), current))
    }
}

/// A world together with its cached margin under one surrogate.
#[derive(Debug, Clone)]
pub struct MarginState<'a> {
    surrogate: &'a LinearSurrogate,
    world: Vec<Label>,
    margin: f64,
}

impl<'a> MarginState<'a> {
    pub fn new(surrogate: &'a LinearSurrogate, world: Vec<Label>) -> Result<Self> {
        let margin = surrogate.margin(&world)?;
        Ok(Self {
            surrogate,
            world,
            margin,
        })
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn world(&self) -> &[Label] {
        &self.world
    }

    pub fn flip(&mut self, i: usize) -> Result<f64> {
        self.margin = self.surrogate.flip_delta(self.margin, i, &self.world)?;
        self.world[i] = self.world[i].flipped();
        Ok(self.margin)
    }
}

/// True iff every surrogate misclassifies its test point in `world`.
pub fn predicate_holds(surrogates: &[LinearSurrogate], world: &[Label]) -> Result<bool> {
    if surrogates.is_empty() {
        return Err(invalid("predicate needs at least one surrogate"));
    }
    for s in surrogates {
        if !s.misclassifies(world)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Surrogate of the logistic-regression decision on `x`:
/// `b0 = decay·θᴷ⁻¹·x`, `wᵢ = alpha_last·gᵢ·(xᵢ·x)`.
pub fn build_lr_surrogate(
    profile: &LrProfile,
    train: &Dataset,
    x: &[f64],
    test_index: usize,
    expected_label: Label,
) -> Result<LinearSurrogate> {
    if x.len() != profile.theta_prev.len() {
        return Err(Error::DimensionMismatch {
            expected: profile.theta_prev.len(),
            got: x.len(),
        });
    }
    if train.dim() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: x.len(),
        });
    }
    if train.len() != profile.g.len() {
        return Err(invalid("profile and training set sizes differ"));
    }
    let bias = profile.decay * dot(&profile.theta_prev, x);
    let values = (0..train.len())
        .map(|i| profile.alpha_last * profile.g[i] * dot(train.features(i), x))
        .collect();
    Ok(LinearSurrogate {
        test_index,
        bias,
        coeffs: Coefficients::Dense { values },
        expected_label,
    })
}

/// Surrogate of the boosted-ensemble decision on `x` with tree structure held
/// fixed: `wᵢ = Σ σ/D_nk` over leaves shared by `xᵢ` and `x`, and
/// `b0 = s(x) − Σ yᵢwᵢ`.
pub fn build_gbdt_surrogate(
    profile: &GbdtProfile,
    x: &[f64],
    test_index: usize,
    expected_label: Label,
) -> Result<LinearSurrogate> {
    if profile.model.trees.len() != profile.trees.len() {
        return Err(invalid("profile tree count does not match its model"));
    }
    let score = gbdt_score(&profile.model, x)?;
    let n = profile.labels.len();
    let sigma = profile.learning_rate;
    let mut dense = vec![0.0; n];
    for (tree, tp) in profile.model.trees.iter().zip(&profile.trees) {
        let leaf = &tp.leaves[tree.leaf_of(x)];
        if leaf.denominator < DEGENERATE_DENOMINATOR {
            continue;
        }
        let w = sigma / leaf.denominator;
        for &i in &leaf.members {
            dense[i] += w;
        }
    }
    let entries: Vec<(usize, f64)> = dense
        .into_iter()
        .enumerate()
        .filter(|&(_, w)| w != 0.0)
        .collect();
    let pulled: f64 = entries
        .iter()
        .map(|&(i, w)| w * profile.labels[i].sign())
        .sum();
    Ok(LinearSurrogate {
        test_index,
        bias: score - pulled,
        coeffs: Coefficients::Sparse { len: n, entries },
        expected_label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_2gauss;
    use crate::gbdt::{train_gbdt, GbdtHyper};
    use crate::logreg::{train_lr, LrHyper};
    use proptest::prelude::*;

    fn labels_from_mask(mask: u32, n: usize) -> Vec<Label> {
        (0..n)
            .map(|i| {
                if mask >> i & 1 == 1 {
                    Label::Pos
                } else {
                    Label::Neg
                }
            })
            .collect()
    }

    fn dense(bias: f64, w: Vec<f64>, expected: Label) -> LinearSurrogate {
        LinearSurrogate {
            test_index: 0,
            bias,
            coeffs: Coefficients::Dense { values: w },
            expected_label: expected,
        }
    }

    #[test]
    fn lr_surrogate_reproduces_trained_score() {
        let ds = gen_2gauss(120, 3.0, 5).unwrap();
        let (model, profile) = train_lr(&ds, &LrHyper::default()).unwrap();
        for x in [[0.3, -1.0], [2.0, 2.0], [-0.1, 0.05]] {
            let s = build_lr_surrogate(&profile, &ds, &x, 0, Label::Pos).unwrap();
            let m = s.margin(&profile.labels).unwrap();
            assert!((m - dot(&model.theta, &x)).abs() < 1e-9);
        }
    }

    #[test]
    fn lr_surrogate_orthogonal_point() {
        let ds = Dataset::from_rows(
            vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![-1.0, 0.0]],
            vec![Label::Pos, Label::Pos, Label::Neg],
        )
        .unwrap();
        let (_, profile) = train_lr(&ds, &LrHyper::default()).unwrap();
        let s = build_lr_surrogate(&profile, &ds, &[0.0, 3.0], 0, Label::Neg).unwrap();
        assert_eq!(s.bias, 0.0);
        assert!(s.coeffs.iter().all(|(_, w)| w == 0.0));
        assert_eq!(s.decision(&profile.labels).unwrap(), Label::Pos);
    }

    /// Four hand-picked points: the per-component expansion
    /// `Σ_c (θ_c x_c + α x_c Σ_l Y_l x_lc g_l)` regrouped by label must give
    /// the same coefficients as the dot-product form.
    #[test]
    fn lr_surrogate_matches_componentwise_expansion() {
        let rows = vec![
            vec![1.0, 2.0],
            vec![-1.5, 0.5],
            vec![0.25, -1.0],
            vec![2.0, 1.0],
        ];
        let labels = vec![Label::Pos, Label::Neg, Label::Neg, Label::Pos];
        let ds = Dataset::from_rows(rows.clone(), labels).unwrap();
        let profile = LrProfile {
            theta_prev: vec![0.4, -0.2],
            alpha_last: 0.05,
            decay: 1.0,
            g: vec![0.3, 0.7, 0.2, 0.9],
            labels: ds.labels(),
        };
        let x = [0.5, -2.0];
        let s = build_lr_surrogate(&profile, &ds, &x, 0, Label::Pos).unwrap();
        // Bias: 0.4·0.5 + (−0.2)(−2) = 0.6.
        assert!((s.bias - 0.6).abs() < 1e-15);
        let expected = [
            0.05 * 0.3 * (1.0 * 0.5 + 2.0 * -2.0),
            0.05 * 0.7 * (-1.5 * 0.5 + 0.5 * -2.0),
            0.05 * 0.2 * (0.25 * 0.5 + -1.0 * -2.0),
            0.05 * 0.9 * (2.0 * 0.5 + 1.0 * -2.0),
        ];
        for (l, e) in expected.iter().enumerate() {
            let per_component: f64 = (0..2)
                .map(|c| 0.05 * x[c] * rows[l][c] * profile.g[l])
                .sum();
            assert!((s.coeffs.get(l) - e).abs() < 1e-15);
            assert!((per_component - e).abs() < 1e-15);
        }
    }

    #[test]
    fn gbdt_surrogate_at_observed_labels_is_score() {
        let ds = gen_2gauss(150, 2.0, 8).unwrap();
        let (model, profile) = train_gbdt(&ds, &GbdtHyper::default()).unwrap();
        for x in [[0.1, 0.2], [-1.0, 1.0], [2.5, -0.3]] {
            let s = build_gbdt_surrogate(&profile, &x, 0, Label::Pos).unwrap();
            let m = s.margin(&profile.labels).unwrap();
            let score = gbdt_score(&model, &x).unwrap();
            assert!((m - score).abs() < 1e-9 * (1.0 + score.abs()));
        }
    }

    #[test]
    fn gbdt_surrogate_single_leaf_flip() {
        let ds = gen_2gauss(20, 6.0, 1).unwrap();
        let hyper = GbdtHyper {
            num_trees: 1,
            max_depth: 0,
            ..GbdtHyper::default()
        };
        let (_, profile) = train_gbdt(&ds, &hyper).unwrap();
        let sigma = hyper.learning_rate;
        let d = profile.trees[0].leaves[0].denominator;
        let s = build_gbdt_surrogate(&profile, &[0.0, 0.0], 0, Label::Pos).unwrap();
        let m0 = s.margin(&profile.labels).unwrap();
        for j in [0, 7, 19] {
            let mut world = profile.labels.clone();
            world[j] = world[j].flipped();
            let m1 = s.margin(&world).unwrap();
            let expected = -2.0 * profile.labels[j].sign() * sigma / d;
            assert!((m1 - m0 - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gbdt_coefficients_only_for_shared_leaves() {
        let ds = gen_2gauss(200, 3.0, 2).unwrap();
        let (model, profile) = train_gbdt(&ds, &GbdtHyper::default()).unwrap();
        let x = [1.2, -0.4];
        let s = build_gbdt_surrogate(&profile, &x, 0, Label::Pos).unwrap();
        for i in 0..ds.len() {
            let shares = model
                .trees
                .iter()
                .any(|t| t.leaf_of(ds.features(i)) == t.leaf_of(&x));
            if !shares {
                assert_eq!(s.coeffs.get(i), 0.0);
            }
        }
    }

    #[test]
    fn zero_coefficients_decide_by_bias() {
        let s = dense(0.0, vec![0.0; 3], Label::Neg);
        let world = vec![Label::Neg; 3];
        assert_eq!(s.decision(&world).unwrap(), Label::Pos);
        let s = dense(-0.1, vec![0.0; 3], Label::Neg);
        assert_eq!(s.decision(&world).unwrap(), Label::Neg);
        assert!(s.margin(&[Label::Pos]).is_err());
    }

    #[test]
    fn exhaustive_decision_check_eight_labels() {
        let w = vec![0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 1.1, -0.4];
        let s = dense(0.15, w.clone(), Label::Pos);
        for mask in 0..256u32 {
            let world = labels_from_mask(mask, 8);
            let direct: f64 = 0.15 + (0..8).map(|i| w[i] * world[i].sign()).sum::<f64>();
            assert_eq!(s.decision(&world).unwrap(), Label::from_score(direct));
        }
    }

    #[test]
    fn flip_delta_zero_weight_and_involution() {
        let s = dense(0.5, vec![0.0, 0.25, -1.0], Label::Pos);
        let world = vec![Label::Pos, Label::Neg, Label::Pos];
        let m = s.margin(&world).unwrap();
        assert_eq!(s.flip_delta(m, 0, &world).unwrap(), m);
        let mut state = MarginState::new(&s, world.clone()).unwrap();
        state.flip(1).unwrap();
        state.flip(1).unwrap();
        assert!((state.margin() - m).abs() < 1e-12);
        assert_eq!(state.world(), &world[..]);
        assert!(matches!(
            s.flip_delta(m, 3, &world),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn conjunction_truth_table() {
        let a = dense(0.1, vec![1.0, -0.5, 0.0, 0.3], Label::Neg);
        let b = dense(-0.2, vec![0.0, 0.4, 0.8, -0.6], Label::Pos);
        for mask in 0..16u32 {
            let world = labels_from_mask(mask, 4);
            let ea = a.misclassifies(&world).unwrap();
            let eb = b.misclassifies(&world).unwrap();
            assert_eq!(
                predicate_holds(&[a.clone(), b.clone()], &world).unwrap(),
                ea && eb
            );
            assert_eq!(
                predicate_holds(std::slice::from_ref(&a), &world).unwrap(),
                ea
            );
        }
        assert!(predicate_holds(&[], &[]).is_err());
    }

    #[test]
    fn sparse_and_dense_agree() {
        let sparse = Coefficients::Sparse {
            len: 5,
            entries: vec![(1, 0.5), (4, -2.0)],
        };
        assert_eq!(sparse.to_dense(), vec![0.0, 0.5, 0.0, 0.0, -2.0]);
        assert_eq!(sparse.get(4), -2.0);
        assert_eq!(sparse.get(2), 0.0);
    }

    proptest! {
        #[test]
        fn flip_delta_matches_recomputation(
            w in prop::collection::vec(-3.0f64..3.0, 1..24),
            bias in -2.0f64..2.0,
            mask in any::<u32>(),
            pick in any::<prop::sample::Index>(),
        ) {
            let n = w.len();
            let s = dense(bias, w, Label::Pos);
            let world = labels_from_mask(mask, n);
            let i = pick.index(n);
            let m = s.margin(&world).unwrap();
            let mut flipped = world.clone();
            flipped[i] = flipped[i].flipped();
            let direct = s.margin(&flipped).unwrap();
            prop_assert!((s.flip_delta(m, i, &world).unwrap() - direct).abs() < 1e-9);
        }

        #[test]
        fn margin_difference_is_linear(
            w in prop::collection::vec(-3.0f64..3.0, 1..24),
            a in any::<u32>(),
            b in any::<u32>(),
        ) {
            let n = w.len();
            let s = dense(0.7, w.clone(), Label::Pos);
            let wa = labels_from_mask(a, n);
            let wb = labels_from_mask(b, n);
            let expected: f64 = (0..n).map(|i| w[i] * (wa[i].sign() - wb[i].sign())).sum();
            let got = s.margin(&wa).unwrap() - s.margin(&wb).unwrap();
            prop_assert!((got - expected).abs() < 1e-9);
        }
    }
}
