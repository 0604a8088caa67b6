//! Gradient-boosted regression trees for binary classification.
//!
//! Boosting minimizes `L(y, F) = log(1 + e^{-2yσF})`. Each round fits a tree to
//! the residuals `ȳᵢ = 2yᵢσ / (1 + e^{2yᵢσF(xᵢ)})` by squared-error splitting and
//! scores every leaf with the Newton step
//!
//! ```text
//! s = Σ ȳᵢ / Σ |ȳᵢ|(2σ − |ȳᵢ|)
//! ```
//!
//! Training also returns a [`GbdtProfile`] holding leaf memberships, residuals
//! and denominators, which the label surrogate is built from.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{invalid, Error, Result};
use crate::logreg::log_sigmoid;

/// Denominators below this are treated as zero and the leaf scores 0.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtHyper {
    pub num_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf_size: usize,
}

impl Default for GbdtHyper {
    fn default() -> Self {
        Self {
            num_trees: 30,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf_size: 5,
        }
    }
}

impl GbdtHyper {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees == 0 {
            return Err(invalid("need at least one tree"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.min_leaf_size == 0 {
            return Err(invalid("min_leaf_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "node")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf: usize,
        score: f64,
    },
}

/// A regression tree stored as a node arena rooted at index 0.
///
/// Points with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub num_leaves: usize,
}

impl Tree {
    pub fn single_leaf(score: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { leaf: 0, score }],
            num_leaves: 1,
        }
    }

    fn leaf_node(&self, x: &[f64]) -> (usize, f64) {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
                Node::Leaf { leaf, score } => return (leaf, score),
            }
        }
    }

    pub fn leaf_of(&self, x: &[f64]) -> usize {
        self.leaf_node(x).0
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.leaf_node(x).1
    }

    pub fn leaf_scores(&self) -> Vec<f64> {
        let mut scores = vec![0.0; self.num_leaves];
        for node in &self.nodes {
            if let Node::Leaf { leaf, score } = *node {
                scores[leaf] = score;
            }
        }
        scores
    }

    fn set_leaf_score(&mut self, leaf_id: usize, value: f64) {
        for node in &mut self.nodes {
            if let Node::Leaf { leaf, score } = node {
                if *leaf == leaf_id {
                    *score = value;
                }
            }
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub trees: Vec<Tree>,
    #[serde(default)]
    pub base_score: f64,
}

impl GbdtModel {
    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if let Some(f) = self.trees.iter().filter_map(Tree::max_feature).max() {
            if f >= x.len() {
                return Err(Error::DimensionMismatch {
                    expected: f + 1,
                    got: x.len(),
                });
            }
        }
        Ok(())
    }
}

pub fn gbdt_score(model: &GbdtModel, x: &[f64]) -> Result<f64> {
    model.check_dim(x)?;
    Ok(model.base_score + model.trees.iter().map(|t| t.score(x)).sum::<f64>())
}

/// `+1` iff the ensemble score is `>= 0`.
pub fn gbdt_classify(model: &GbdtModel, x: &[f64]) -> Result<Label> {
    Ok(Label::from_score(gbdt_score(model, x)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafProfile {
    pub members: Vec<usize>,
    pub denominator: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeProfile {
    /// Residuals the tree was fit to, indexed by training point.
    pub residuals: Vec<f64>,
    /// Indexed by leaf id.
    pub leaves: Vec<LeafProfile>,
}

/// Everything recorded during one boosting run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtProfile {
    pub learning_rate: f64,
    pub labels: Vec<Label>,
    pub trees: Vec<TreeProfile>,
    /// Tree topology, needed to route test points to leaves.
    pub model: GbdtModel,
}

impl GbdtProfile {
    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// Leaf of each training point in tree `n`, from the stored memberships.
    pub fn training_leaves(&self, n: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.labels.len()];
        for (k, leaf) in self.trees[n].leaves.iter().enumerate() {
            for &i in &leaf.members {
                out[i] = k;
            }
        }
        out
    }
}

/// Negative loss gradients `2yσ / (1 + e^{2yσF})`.
pub fn residuals(labels: &[Label], scores: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if labels.len() != scores.len() {
        return Err(invalid(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    Ok(labels
        .iter()
        .zip(scores)
        .map(|(y, &f)| {
            let ys = 2.0 * y.sign() * sigma;
            ys / (1.0 + (ys * f).exp())
        })
        .collect())
}

/// `log(1 + e^{-2yσF})`.
pub fn boosting_loss(label: Label, score: f64, sigma: f64) -> f64 {
    -log_sigmoid(2.0 * label.sign() * sigma * score)
}

fn denominator(member_residuals: &[f64], sigma: f64) -> f64 {
    member_residuals
        .iter()
        .map(|r| r.abs() * (2.0 * sigma - r.abs()))
        .sum()
}

/// Newton leaf score; 0 when the denominator is degenerate.
pub fn leaf_score(member_residuals: &[f64], sigma: f64) -> f64 {
    let d = denominator(member_residuals, sigma);
    if d < DEGENERATE_DENOMINATOR {
        return 0.0;
    }
    member_residuals.iter().sum::<f64>() / d
}

/// A fitted tree with its leaf memberships and denominators.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedTree {
    pub tree: Tree,
    pub leaves: Vec<LeafProfile>,
}

struct Builder<'a> {
    ds: &'a Dataset,
    targets: &'a [f64],
    hyper: &'a GbdtHyper,
    nodes: Vec<Node>,
    leaves: Vec<LeafProfile>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Builder<'_> {
    fn build(&mut self, members: Vec<usize>, depth: usize) -> usize {
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf {
            leaf: 0,
            score: 0.0,
        });
        let split = if depth < self.hyper.max_depth {
            self.best_split(&members)
        } else {
            None
        };
        match split {
            Some(choice) => {
                let left = self.build(choice.left, depth + 1);
                let right = self.build(choice.right, depth + 1);
                self.nodes[slot] = Node::Split {
                    feature: choice.feature,
                    threshold: choice.threshold,
                    left,
                    right,
                };
            }
            None => {
                let member_targets: Vec<f64> = members.iter().map(|&i| self.targets[i]).collect();
                let sigma = self.hyper.learning_rate;
                let leaf = self.leaves.len();
                let score = leaf_score(&member_targets, sigma);
                self.leaves.push(LeafProfile {
                    denominator: denominator(&member_targets, sigma),
                    score,
                    members,
                });
                self.nodes[slot] = Node::Leaf { leaf, score };
            }
        }
        slot
    }

    /// Largest squared-error reduction over midpoint thresholds; ties keep the
    /// lowest feature index, then the lowest threshold.
    fn best_split(&self, members: &[usize]) -> Option<SplitChoice> {
        let n = members.len();
        let min_leaf = self.hyper.min_leaf_size;
        if n < 2 * min_leaf {
            return None;
        }
        let total: f64 = members.iter().map(|&i| self.targets[i]).sum();
        let total_sq: f64 = members.iter().map(|&i| self.targets[i].powi(2)).sum();
        let parent = total * total / n as f64;
        let min_gain = 1e-12 * total_sq.max(f64::MIN_POSITIVE);

        let mut best: Option<(f64, usize, f64)> = None;
        for feature in 0..self.ds.dim() {
            let value = |i: usize| self.ds.features(i)[feature];
            let mut order = members.to_vec();
            order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for pos in 1..n {
                left_sum += self.targets[order[pos - 1]];
                if pos < min_leaf || n - pos < min_leaf {
                    continue;
                }
                let (lo, hi) = (value(order[pos - 1]), value(order[pos]));
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / pos as f64
                    + right_sum * right_sum / (n - pos) as f64
                    - parent;
                if gain > min_gain && best.as_ref().is_none_or(|b| gain > b.0) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((gain, feature, threshold));
                }
            }
        }
        best.map(|(_, feature, threshold)| {
            let (left, right) = members
                .iter()
                .partition(|&&i| self.ds.features(i)[feature] <= threshold);
            SplitChoice {
                feature,
                threshold,
                left,
                right,
            }
        })
    }
}

/// Fits one regression tree to `targets` over every point of `ds`.
///
/// Leaves are scored with [`leaf_score`] using `hyper.learning_rate`, not with
/// the target mean.
pub fn fit_regression_tree(ds: &Dataset, targets: &[f64], hyper: &GbdtHyper) -> Result<FittedTree> {
    if targets.len() != ds.len() {
        return Err(invalid("one target per point required"));
    }
    if ds.len() < hyper.min_leaf_size.max(1) {
        return Err(invalid("fewer points than min_leaf_size"));
    }
    let mut builder = Builder {
        ds,
        targets,
        hyper,
        nodes: Vec::new(),
        leaves: Vec::new(),
    };
    builder.build((0..ds.len()).collect(), 0);
    let tree = Tree {
        num_leaves: builder.leaves.len(),
        nodes: builder.nodes,
    };
    Ok(FittedTree {
        tree,
        leaves: builder.leaves,
    })
}

pub fn train_gbdt(train: &Dataset, hyper: &GbdtHyper) -> Result<(GbdtModel, GbdtProfile)> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    let labels = train.labels();
    let sigma = hyper.learning_rate;
    let mut scores = vec![0.0; train.len()];
    let mut model = GbdtModel::default();
    let mut tree_profiles = Vec::with_capacity(hyper.num_trees);

    for _ in 0..hyper.num_trees {
        let r = residuals(&labels, &scores, sigma)?;
        let fitted = fit_regression_tree(train, &r, hyper)?;
        for leaf in &fitted.leaves {
            for &i in &leaf.members {
                scores[i] += leaf.score;
            }
        }
        model.trees.push(fitted.tree);
        tree_profiles.push(TreeProfile {
            residuals: r,
            leaves: fitted.leaves,
        });
    }

    let profile = GbdtProfile {
        learning_rate: sigma,
        labels,
        trees: tree_profiles,
        model: model.clone(),
    };
    Ok((model, profile))
}

/// Rescores every leaf of `model` from the residuals stored in `profile`.
pub fn rescore_from_profile(profile: &GbdtProfile) -> GbdtModel {
    let mut model = profile.model.clone();
    for (tree, tp) in model.trees.iter_mut().zip(&profile.trees) {
        for (k, leaf) in tp.leaves.iter().enumerate() {
            let r: Vec<f64> = leaf.members.iter().map(|&i| tp.residuals[i]).collect();
            tree.set_leaf_score(k, leaf_score(&r, profile.learning_rate));
        }
    }
    model
}
