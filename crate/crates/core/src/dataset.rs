//! Labeled datasets, synthetic generators, CSV persistence, splitting and
//! label-noise injection.
//!
//! Labels are binary and carried as [`Label`]; every operation here keeps them
//! in `{-1, +1}`. Point indices are stable: relabeling never reorders points.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Radial standard deviation of the concentric generator.
pub const CONCENTRIC_RADIAL_STD: f64 = 0.35;

/// A binary class label, serialized as `-1` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Neg => Label::Pos,
            Label::Pos => Label::Neg,
        }
    }

    /// `+1` iff `score >= 0`.
    pub fn from_score(score: f64) -> Label {
        if score >= 0.0 {
            Label::Pos
        } else {
            Label::Neg
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            -1 => Ok(Label::Neg),
            1 => Ok(Label::Pos),
            other => Err(format!("label must be -1 or 1, got {other}")),
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Neg => -1,
            Label::Pos => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", i8::from(*self))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub features: Vec<f64>,
    pub label: Label,
}

impl LabeledPoint {
    pub fn new(features: Vec<f64>, label: Label) -> Result<Self> {
        if let Some(j) = features.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("feature {j} is not finite")));
        }
        Ok(Self { features, label })
    }
}

/// Ordered collection of labeled points sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    points: Vec<LabeledPoint>,
}

impl Dataset {
    pub fn new(dim: usize, points: Vec<LabeledPoint>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dataset dimension must be positive"));
        }
        for p in &points {
            if p.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.features.len(),
                });
            }
            if p.features.iter().any(|v| !v.is_finite()) {
                return Err(invalid("non-finite feature value"));
            }
        }
        Ok(Self { dim, points })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(invalid(format!(
                "{} feature rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dim = rows.first().map(Vec::len).unwrap_or(1);
        let points = rows
            .into_iter()
            .zip(labels)
            .map(|(features, label)| LabeledPoint { features, label })
            .collect();
        Self::new(dim, points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &LabeledPoint {
        &self.points[i]
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.points[i].features
    }

    pub fn label(&self, i: usize) -> Label {
        self.points[i].label
    }

    pub fn labels(&self) -> Vec<Label> {
        self.points.iter().map(|p| p.label).collect()
    }

    /// Copy of this dataset with every label replaced.
    pub fn with_labels(&self, labels: &[Label]) -> Result<Dataset> {
        if labels.len() != self.len() {
            return Err(invalid(format!(
                "expected {} labels, got {}",
                self.len(),
                labels.len()
            )));
        }
        let mut out = self.clone();
        for (p, &l) in out.points.iter_mut().zip(labels) {
            p.label = l;
        }
        Ok(out)
    }

    /// Copy of this dataset with the labels at `indices` negated.
    pub fn with_flipped(&self, indices: &[usize]) -> Result<Dataset> {
        let mut out = self.clone();
        for &i in indices {
            let p = out.points.get_mut(i).ok_or(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            })?;
            p.label = p.label.flipped();
        }
        Ok(out)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            dim: self.dim,
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
        }
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.points.iter().filter(|p| p.label == label).count()
    }
}

fn check_count(n_points: usize) -> Result<()> {
    if n_points < 2 {
        return Err(invalid(format!("need at least 2 points, got {n_points}")));
    }
    Ok(())
}

/// Two unit-variance isotropic Gaussians centered at `(∓separation/2, 0)`.
///
/// The first `n/2` points are labeled `-1`, the rest `+1`.
pub fn gen_2gauss(n_points: usize, separation: f64, seed: u64) -> Result<Dataset> {
    check_count(n_points)?;
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(invalid("separation must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_neg = n_points / 2;
    let points = (0..n_points)
        .map(|i| {
            let label = if i < n_neg { Label::Neg } else { Label::Pos };
            let cx = label.sign() * separation / 2.0;
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            LabeledPoint {
                features: vec![cx + x, y],
                label,
            }
        })
        .collect();
    Dataset::new(2, points)
}

/// Two rings around the origin: `-1` near `inner_radius`, `+1` near
/// `outer_radius`, with Gaussian radial jitter of [`CONCENTRIC_RADIAL_STD`].
pub fn gen_concentric(
    n_points: usize,
    inner_radius: f64,
    outer_radius: f64,
    seed: u64,
) -> Result<Dataset> {
    check_count(n_points)?;
    if !(inner_radius > 0.0 && inner_radius < outer_radius && outer_radius.is_finite()) {
        return Err(invalid(format!(
            "need 0 < inner_radius < outer_radius, got {inner_radius} and {outer_radius}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_neg = n_points / 2;
    let points = (0..n_points)
        .map(|i| {
            let (label, center) = if i < n_neg {
                (Label::Neg, inner_radius)
            } else {
                (Label::Pos, outer_radius)
            };
            let jitter: f64 = rng.sample(StandardNormal);
            let r = (center + CONCENTRIC_RADIAL_STD * jitter).abs();
            let angle = rng.random::<f64>() * TAU;
            LabeledPoint {
                features: vec![r * angle.cos(), r * angle.sin()],
                label,
            }
        })
        .collect();
    Dataset::new(2, points)
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a dataset with header `f1,...,fn,label`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    if header.len() < 2 || header.get(header.len() - 1).map(str::trim) != Some("label") {
        return Err(parse_error(
            path,
            1,
            "header must list at least one feature followed by `label`",
        ));
    }
    if header.iter().any(|h| h.trim().is_empty()) {
        return Err(parse_error(path, 1, "empty column name in header"));
    }
    let dim = header.len() - 1;
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let mut features = Vec::with_capacity(dim);
        for (j, field) in record.iter().take(dim).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_error(
                    path,
                    line,
                    format!("feature {} is not a number: {field:?}", j + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_error(
                    path,
                    line,
                    format!("feature {} is not finite", j + 1),
                ));
            }
            features.push(v);
        }
        let raw = record[dim].trim();
        let label = match raw {
            "-1" => Label::Neg,
            "1" | "+1" => Label::Pos,
            other => {
                return Err(parse_error(
                    path,
                    line,
                    format!("label must be -1 or 1, got {other:?}"),
                ))
            }
        };
        points.push(LabeledPoint { features, label });
    }
    Dataset::new(dim, points)
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    let mut header: Vec<String> = (1..=ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".to_string());
    writer.write_record(&header).map_err(csv_io)?;
    for p in ds.points() {
        let mut row: Vec<String> = p.features.iter().map(|v| v.to_string()).collect();
        row.push(p.label.to_string());
        writer.write_record(&row).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Shuffled index partition into (train, test, validation).
pub fn split_indices(
    n: usize,
    train_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && test_frac > 0.0 && train_frac + test_frac < 1.0) {
        return Err(invalid(format!(
            "split fractions must be positive with sum below 1, got {train_frac} and {test_frac}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * train_frac).round() as usize;
    let n_test = (((n as f64) * test_frac).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let validation = order.split_off(n_train + n_test);
    let test = order.split_off(n_train);
    Ok((order, test, validation))
}

/// Splits into (train, test, validation) datasets.
pub fn split(
    ds: &Dataset,
    train_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (tr, te, va) = split_indices(ds.len(), train_frac, test_frac, seed)?;
    Ok((ds.subset(&tr), ds.subset(&te), ds.subset(&va)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Random,
    Systematic,
}

/// Predicate over a single feature choosing the points hit by systematic noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Selector {
    Above { feature: usize, threshold: f64 },
    Below { feature: usize, threshold: f64 },
    Equals { feature: usize, value: f64 },
}

impl Selector {
    pub fn feature(&self) -> usize {
        match *self {
            Selector::Above { feature, .. }
            | Selector::Below { feature, .. }
            | Selector::Equals { feature, .. } => feature,
        }
    }

    pub fn matches(&self, x: &[f64]) -> bool {
        match *self {
            Selector::Above { feature, threshold } => {
                x.get(feature).is_some_and(|&v| v > threshold)
            }
            Selector::Below { feature, threshold } => {
                x.get(feature).is_some_and(|&v| v < threshold)
            }
            Selector::Equals { feature, value } => x.get(feature).is_some_and(|&v| v == value),
        }
    }

    /// `Above` selector on `feature` covering the top `fraction` of `ds`.
    ///
    /// The threshold sits halfway between the last selected and the first
    /// unselected value, so ties can make the coverage differ slightly.
    pub fn top_fraction(ds: &Dataset, feature: usize, fraction: f64) -> Result<Selector> {
        if feature >= ds.dim() {
            return Err(Error::DimensionMismatch {
                expected: ds.dim(),
                got: feature + 1,
            });
        }
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(invalid("coverage fraction must lie in (0, 1)"));
        }
        let mut values: Vec<f64> = ds.points().iter().map(|p| p.features[feature]).collect();
        values.sort_by(|a, b| b.total_cmp(a));
        let k = ((ds.len() as f64) * fraction).round().max(1.0) as usize;
        if k >= values.len() {
            return Err(invalid("coverage fraction selects every point"));
        }
        let threshold = 0.5 * (values[k - 1] + values[k]);
        Ok(Selector::Above { feature, threshold })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<Selector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_label: Option<Label>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn random(rate: f64, seed: u64) -> Self {
        Self {
            mode: NoiseMode::Random,
            rate,
            selector: None,
            forced_label: None,
            seed,
        }
    }

    pub fn systematic(selector: Selector, forced_label: Label, seed: u64) -> Self {
        Self {
            mode: NoiseMode::Systematic,
            rate: 0.0,
            selector: Some(selector),
            forced_label: Some(forced_label),
            seed,
        }
    }
}

/// Ground truth of an injection: which labels changed and what they were.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub flipped_indices: Vec<usize>,
    pub original_labels: BTreeMap<usize, Label>,
}

impl NoiseRecord {
    pub fn len(&self) -> usize {
        self.flipped_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flipped_indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.original_labels.contains_key(&index)
    }

    /// Puts the recorded original labels back.
    pub fn restore(&self, noisy: &Dataset) -> Result<Dataset> {
        let mut labels = noisy.labels();
        for (&i, &l) in &self.original_labels {
            *labels.get_mut(i).ok_or(Error::IndexOutOfRange {
                index: i,
                len: noisy.len(),
            })? = l;
        }
        noisy.with_labels(&labels)
    }
}

pub fn inject_noise(ds: &Dataset, spec: &NoiseSpec) -> Result<(Dataset, NoiseRecord)> {
    let targets: Vec<(usize, Label)> = match spec.mode {
        NoiseMode::Random => {
            if !(0.0..=0.5).contains(&spec.rate) {
                return Err(invalid(format!(
                    "noise rate must lie in [0, 0.5], got {}",
                    spec.rate
                )));
            }
            let k = ((ds.len() as f64) * spec.rate).round() as usize;
            if k == 0 {
                return Err(invalid("noise rate flips no labels for this dataset size"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut picked = rand::seq::index::sample(&mut rng, ds.len(), k).into_vec();
            picked.sort_unstable();
            picked
                .into_iter()
                .map(|i| (i, ds.label(i).flipped()))
                .collect()
        }
        NoiseMode::Systematic => {
            let (Some(selector), Some(forced)) = (&spec.selector, spec.forced_label) else {
                return Err(invalid(
                    "systematic noise needs a selector and a forced label",
                ));
            };
            let selected: Vec<usize> = (0..ds.len())
                .filter(|&i| selector.matches(ds.features(i)))
                .collect();
            if selected.is_empty() {
                return Err(Error::EmptySelection);
            }
            selected
                .into_iter()
                .filter(|&i| ds.label(i) != forced)
                .map(|i| (i, forced))
                .collect()
        }
    };

    let mut labels = ds.labels();
    let mut record = NoiseRecord::default();
    for (i, new_label) in targets {
        record.flipped_indices.push(i);
        record.original_labels.insert(i, labels[i]);
        labels[i] = new_label;
    }
    Ok((ds.with_labels(&labels)?, record))
}
