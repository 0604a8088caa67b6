//! Probability-of-sufficiency estimation over counterfactual relabelings.
//!
//! A world is a full labeling of the training set drawn from a prior that
//! flips each observed label independently with probability `ε`. For label `i`
//!
//! ```text
//! PS(i) = P( error after setting Yᵢ := yᵢ  |  no error,  Yᵢ ≠ yᵢ )
//! ```
//!
//! where "error" is the conjunction of the surrogates' misclassification
//! predicates. [`estimate_ps`] draws worlds once, rejects those already
//! showing the error, and reuses every accepted world for all labels it
//! flipped. [`naive_ps`] samples separately per label and [`exact_ps`] sums
//! over all `2^N` worlds; both exist to cross-check the main sampler.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{invalid, Error, Result};
use crate::surrogate::{flipped_margin, predicate_holds, LinearSurrogate};

pub const DEFAULT_FLIP_PROB: f64 = 0.1;
pub const DEFAULT_NUM_SAMPLES: usize = 100_000;
/// Estimates backed by fewer trials are flagged `low_confidence`.
pub const DEFAULT_MIN_TRIALS: u64 = 30;
/// Largest training set [`exact_ps`] will enumerate.
pub const EXACT_LABEL_LIMIT: usize = 20;

const WORLDS_PER_BLOCK: usize = 1024;
const NAIVE_STREAM_SALT: u64 = 0x6e61_6976_6570_7321;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub flip_prob: f64,
    pub seed: u64,
    pub num_samples: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            flip_prob: DEFAULT_FLIP_PROB,
            seed: 0,
            num_samples: DEFAULT_NUM_SAMPLES,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.flip_prob > 0.0 && self.flip_prob < 0.5) {
            return Err(invalid(format!(
                "flip probability must lie in (0, 0.5), got {}",
                self.flip_prob
            )));
        }
        if self.num_samples == 0 {
            return Err(invalid("need at least one sample"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// One predicate: every test point misclassified.
    #[default]
    Conjunction,
    /// Run each test point alone and average the defined PS values.
    PerTestMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerOptions {
    /// Worker threads; `None` uses the global pool. Results do not depend on it.
    pub threads: Option<usize>,
    pub min_trials: u64,
    pub aggregation: Aggregation,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            threads: None,
            min_trials: DEFAULT_MIN_TRIALS,
            aggregation: Aggregation::Conjunction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct World {
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsEstimate {
    pub index: usize,
    pub ps: f64,
    pub trials: u64,
    pub successes: u64,
    pub defined: bool,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Shared worlds with sample reuse.
    Sampled,
    /// Independent per-label sampling.
    Naive,
    /// Probability-weighted enumeration; trial counts are world counts.
    Exact,
    PerTestMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub method: Method,
    pub seed: u64,
    pub num_samples: usize,
    pub flip_prob: f64,
    pub test_indices: Vec<usize>,
    pub predicate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsReport {
    /// Sorted by PS descending, ties by ascending index.
    pub estimates: Vec<PsEstimate>,
    pub accepted_worlds: u64,
    pub rejected_worlds: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub metadata: ReportMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl PsReport {
    pub fn get(&self, index: usize) -> Option<&PsEstimate> {
        self.estimates.iter().find(|e| e.index == index)
    }

    /// PS values indexed by training point.
    pub fn ps_by_index(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.estimates.len()];
        for e in &self.estimates {
            out[e.index] = e.ps;
        }
        out
    }
}

fn world_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Indices flipped in one world: independent Bernoulli(ε) per label, drawn
/// by skipping geometric gaps.
fn sample_flips(rng: &mut ChaCha8Rng, gaps: &Geometric, n: usize, out: &mut Vec<usize>) {
    out.clear();
    let mut pos: u64 = 0;
    loop {
        pos = pos.saturating_add(gaps.sample(rng));
        if pos >= n as u64 {
            break;
        }
        out.push(pos as usize);
        pos += 1;
    }
}

fn geometric(flip_prob: f64) -> Result<Geometric> {
    Geometric::new(flip_prob).map_err(|e| invalid(format!("flip probability: {e}")))
}

/// World number `stream` of the prior around `observed`.
pub fn sample_world(prior: &PriorConfig, observed: &[Label], stream: u64) -> Result<World> {
    prior.validate()?;
    let gaps = geometric(prior.flip_prob)?;
    let mut flips = Vec::new();
    sample_flips(
        &mut world_rng(prior.seed, stream),
        &gaps,
        observed.len(),
        &mut flips,
    );
    let mut labels = observed.to_vec();
    for i in flips {
        labels[i] = labels[i].flipped();
    }
    Ok(World { labels })
}

fn describe(surrogates: &[LinearSurrogate]) -> String {
    let ids: Vec<String> = surrogates
        .iter()
        .map(|s| s.test_index.to_string())
        .collect();
    format!("all misclassified: test points [{}]", ids.join(", "))
}

fn check_task(surrogates: &[LinearSurrogate], observed: &[Label]) -> Result<()> {
    if surrogates.is_empty() {
        return Err(invalid("need at least one surrogate"));
    }
    if observed.is_empty() {
        return Err(invalid("need at least one training label"));
    }
    for s in surrogates {
        if s.num_labels() != observed.len() {
            return Err(Error::DimensionMismatch {
                expected: observed.len(),
                got: s.num_labels(),
            });
        }
    }
    Ok(())
}

/// Surrogates flattened for the sampling loop: weight of label `i` under
/// surrogate `s` sits at `weights[i * k + s]`.
struct Compiled {
    k: usize,
    weights: Vec<f64>,
    base: Vec<f64>,
    expected: Vec<Label>,
}

impl Compiled {
    fn new(surrogates: &[LinearSurrogate], observed: &[Label]) -> Result<Self> {
        let k = surrogates.len();
        let n = observed.len();
        let mut weights = vec![0.0; n * k];
        let mut base = Vec::with_capacity(k);
        for (s, sur) in surrogates.iter().enumerate() {
            for (i, w) in sur.coeffs.iter() {
                weights[i * k + s] = w;
            }
            base.push(sur.margin(observed)?);
        }
        Ok(Self {
            k,
            weights,
            base,
            expected: surrogates.iter().map(|s| s.expected_label).collect(),
        })
    }

    fn all_wrong(&self, margins: &[f64]) -> bool {
        margins
            .iter()
            .zip(&self.expected)
            .all(|(&m, &e)| Label::from_score(m) != e)
    }

    /// Whether the error holds after flipping label `i`, currently `current`.
    fn all_wrong_after_flip(&self, margins: &[f64], i: usize, current: Label) -> bool {
        let w = &self.weights[i * self.k..(i + 1) * self.k];
        margins
            .iter()
            .zip(w)
            .zip(&self.expected)
            .all(|((&m, &wi), &e)| Label::from_score(flipped_margin(m, wi, current)) != e)
    }
}

#[derive(Debug, Clone)]
struct Counters {
    trials: Vec<u64>,
    successes: Vec<u64>,
    accepted: u64,
    rejected: u64,
}

impl Counters {
    fn new(n: usize) -> Self {
        Self {
            trials: vec![0; n],
            successes: vec![0; n],
            accepted: 0,
            rejected: 0,
        }
    }

    fn merge(mut self, other: Counters) -> Counters {
        for (a, b) in self.trials.iter_mut().zip(other.trials) {
            *a += b;
        }
        for (a, b) in self.successes.iter_mut().zip(other.successes) {
            *a += b;
        }
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self
    }
}

fn run_block(
    task: &Compiled,
    observed: &[Label],
    prior: &PriorConfig,
    gaps: &Geometric,
    worlds: std::ops::Range<usize>,
    acc: &mut Counters,
) {
    let mut flips = Vec::new();
    let mut margins = vec![0.0; task.k];
    for world in worlds {
        let mut rng = world_rng(prior.seed, world as u64);
        sample_flips(&mut rng, gaps, observed.len(), &mut flips);
        margins.copy_from_slice(&task.base);
        for &i in &flips {
            let w = &task.weights[i * task.k..(i + 1) * task.k];
            for (m, &wi) in margins.iter_mut().zip(w) {
                *m = flipped_margin(*m, wi, observed[i]);
            }
        }
        // observe(no error)
        if task.all_wrong(&margins) {
            acc.rejected += 1;
            continue;
        }
        acc.accepted += 1;
        // Intervene on each flipped label in turn, restoring it to yᵢ.
        for &i in &flips {
            acc.trials[i] += 1;
            if task.all_wrong_after_flip(&margins, i, observed[i].flipped()) {
                acc.successes[i] += 1;
            }
        }
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn finish(n: usize, counters: Counters, min_trials: u64, metadata: ReportMetadata) -> PsReport {
    let estimates = (0..n)
        .map(|index| {
            let trials = counters.trials[index];
            let successes = counters.successes[index];
            let defined = trials > 0;
            PsEstimate {
                index,
                ps: if defined {
                    successes as f64 / trials as f64
                } else {
                    0.0
                },
                trials,
                successes,
                defined,
                low_confidence: trials < min_trials,
            }
        })
        .collect();
    let diagnostic = (counters.accepted == 0).then(|| {
        "no sampled world passed the no-error condition; every estimate is undefined".to_string()
    });
    let mut report = PsReport {
        estimates,
        accepted_worlds: counters.accepted,
        rejected_worlds: counters.rejected,
        threshold: None,
        metadata,
        diagnostic,
    };
    sort_estimates(&mut report.estimates);
    report
}

fn sort_estimates(estimates: &mut [PsEstimate]) {
    estimates.sort_by(|a, b| b.ps.total_cmp(&a.ps).then(a.index.cmp(&b.index)));
}

/// Sampled PS for every training label with default options.
pub fn estimate_ps(
    surrogates: &[LinearSurrogate],
    observed: &[Label],
    prior: &PriorConfig,
) -> Result<PsReport> {
    estimate_ps_with(surrogates, observed, prior, &SamplerOptions::default())
}

pub fn estimate_ps_with(
    surrogates: &[LinearSurrogate],
    observed: &[Label],
    prior: &PriorConfig,
    opts: &SamplerOptions,
) -> Result<PsReport> {
    check_task(surrogates, observed)?;
    prior.validate()?;
    match opts.aggregation {
        Aggregation::Conjunction => sample_conjunction(surrogates, observed, prior, opts),
        Aggregation::PerTestMean => per_test_mean(surrogates, observed, prior, opts),
    }
}

fn sample_conjunction(
    surrogates: &[LinearSurrogate],
    observed: &[Label],
    prior: &PriorConfig,
    opts: &SamplerOptions,
) -> Result<PsReport> {
    let n = observed.len();
    let task = Compiled::new(surrogates, observed)?;
    let gaps = geometric(prior.flip_prob)?;
    let blocks = prior.num_samples.div_ceil(WORLDS_PER_BLOCK);
    let counters = with_pool(opts.threads, || {
        (0..blocks)
            .into_par_iter()
            .fold(
                || Counters::new(n),
                |mut acc, b| {
                    let start = b * WORLDS_PER_BLOCK;
                    let end = (start + WORLDS_PER_BLOCK).min(prior.num_samples);
                    run_block(&task, observed, prior, &gaps, start..end, &mut acc);
                    acc
                },
            )
            .reduce(|| Counters::new(n), Counters::merge)
    })?;
    let metadata = ReportMetadata {
        method: Method::Sampled,
        seed: prior.seed,
        num_samples: prior.num_samples,
        flip_prob: prior.flip_prob,
        test_indices: surrogates.iter().map(|s| s.test_index).collect(),
        predicate: describe(surrogates),
    };
    Ok(finish(n, counters, opts.min_trials, metadata))
}

fn per_test_mean(
    surrogates: &[LinearSurrogate],
    observed: &[Label],
    prior: &PriorConfig,
    opts: &SamplerOptions,
) -> Result<PsReport> {
    let n = observed.len();
    let mut sum_ps = vec![0.0; n];
    let mut defined_runs = vec![0u32; n];
    let mut total = Counters::new(n);
    for s in surrogates {
        let single = sample_conjunction(std::slice::from_ref(s), observed, prior, opts)?;
        for e in &single.estimates {
            if e.defined {
                sum_ps[e.index] += e.ps;
                defined_runs[e.index] += 1;
            }
            total.trials[e.index] += e.trials;
            total.successes[e.index] += e.successes;
        }
        total.accepted += single.accepted_worlds;
        total.rejected += single.rejected_worlds;
    }
    let mut estimates: Vec<PsEstimate> = (0..n)
        .map(|index| {
            let defined = defined_runs[index] > 0;
            PsEstimate {
                index,
                ps: if defined {
                    sum_ps[index] / defined_runs[index] as f64
                } else {
                    0.0
                },
                trials: total.trials[index],
                successes: total.successes[index],
                defined,
                low_confidence: total.trials[index] < opts.min_trials,
            }
        })
        .collect();
    sort_estimates(&mut estimates);
    Ok(PsReport {
        estimates,
        accepted_worlds: total.accepted,
        rejected_worlds: total.rejected,
        threshold: None,
        metadata: ReportMetadata {
            method: Method::PerTestMean,
            seed: prior.seed,
            num_samples: prior.num_samples * surrogates.len(),
            flip_prob: prior.flip_prob,
            test_indices: surrogates.iter().map(|s| s.test_index).collect(),
            predicate: format!("mean over tests of: {}", describe(surrogates)),
        },
        diagnostic: (total.accepted == 0)
            .then(|| "no sampled world passed the no-error condition".to_string()),
    })
}

/// Per-label sampler following the unshared program literally: draw a world,
/// require `Yᵢ ≠ yᵢ`, require no error, set `Yᵢ := yᵢ`, record the error.
///
/// Each label gets `prior.num_samples` draws of its own and every predicate is
/// recomputed from scratch.
pub fn naive_ps(
    surrogates: &[LinearSurrogate],
    observed: &[Label],
    prior: &PriorConfig,
) -> Result<PsReport> {
    check_task(surrogates, observed)?;
    prior.validate()?;
    let n = observed.len();
    let gaps = geometric(prior.flip_prob)?;
    let per_label: Vec<(u64, u64)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(u64, u64)> {
            let mut rng = world_rng(prior.seed ^ NAIVE_STREAM_SALT, i as u64);
            let mut flips = Vec::new();
            let (mut trials, mut successes) = (0u64, 0u64);
            for _ in 0..prior.num_samples {
                sample_flips(&mut rng, &gaps, n, &mut flips);
                let mut world = observed.to_vec();
                for &j in &flips {
                    world[j] = world[j].flipped();
                }
                if world[i] == observed[i] || predicate_holds(surrogates, &world)? {
                    continue;
                }
                world[i] = observed[i];
                trials += 1;
                if predicate_holds(surrogates, &world)? {
                    successes += 1;
                }
            }
            Ok((trials, successes))
        })
        .collect::<Result<_>>()?;

    let mut counters = Counters::new(n);
    for (i, (t, s)) in per_label.into_iter().enumerate() {
        counters.trials[i] = t;
        counters.successes[i] = s;
        counters.accepted += t;
    }
    counters.rejected = (n * prior.num_samples) as u64 - counters.accepted;
    let metadata = ReportMetadata {
        method: Method::Naive,
        seed: prior.seed,
        num_samples: prior.num_samples,
        flip_prob: prior.flip_prob,
        test_indices: surrogates.iter().map(|s| s.test_index).collect(),
        predicate: describe(surrogates),
    };
    let mut report = finish(n, counters, DEFAULT_MIN_TRIALS, metadata);
    report.diagnostic = None;
    Ok(report)
}

/// Exact PS by summing the prior over all `2^N` worlds.
///
/// `ps` is the probability-weighted ratio; `trials`/`successes` count the
/// worlds in the conditioning and success events. `flip_prob` may be 0.5 here
/// (the uniform prior).
pub fn exact_ps(
    surrogates: &[LinearSurrogate],
    observed: &[Label],
    flip_prob: f64,
) -> Result<PsReport> {
    check_task(surrogates, observed)?;
    let n = observed.len();
    if n > EXACT_LABEL_LIMIT {
        return Err(Error::EnumerationTooLarge {
            labels: n,
            limit: EXACT_LABEL_LIMIT,
        });
    }
    if !(flip_prob > 0.0 && flip_prob <= 0.5) {
        return Err(invalid(format!(
            "flip probability must lie in (0, 0.5], got {flip_prob}"
        )));
    }
    let worlds = 1usize << n;
    // Bit i of a mask set means label i differs from the observed one.
    let mut error = vec![false; worlds];
    let mut labels = observed.to_vec();
    for (mask, slot) in error.iter_mut().enumerate() {
        for (i, l) in labels.iter_mut().enumerate() {
            *l = if mask >> i & 1 == 1 {
                observed[i].flipped()
            } else {
                observed[i]
            };
        }
        *slot = predicate_holds(surrogates, &labels)?;
    }
    let weight: Vec<f64> = (0..=n)
        .map(|k| flip_prob.powi(k as i32) * (1.0 - flip_prob).powi((n - k) as i32))
        .collect();

    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    let mut counters = Counters::new(n);
    for mask in 0..worlds {
        if error[mask] {
            counters.rejected += 1;
            continue;
        }
        counters.accepted += 1;
        let p = weight[mask.count_ones() as usize];
        for i in 0..n {
            if mask >> i & 1 == 0 {
                continue;
            }
            den[i] += p;
            counters.trials[i] += 1;
            if error[mask ^ (1 << i)] {
                num[i] += p;
                counters.successes[i] += 1;
            }
        }
    }
    let mut estimates: Vec<PsEstimate> = (0..n)
        .map(|index| PsEstimate {
            index,
            ps: if den[index] > 0.0 {
                num[index] / den[index]
            } else {
                0.0
            },
            trials: counters.trials[index],
            successes: counters.successes[index],
            defined: den[index] > 0.0,
            low_confidence: false,
        })
        .collect();
    sort_estimates(&mut estimates);
    Ok(PsReport {
        estimates,
        accepted_worlds: counters.accepted,
        rejected_worlds: counters.rejected,
        threshold: None,
        metadata: ReportMetadata {
            method: Method::Exact,
            seed: 0,
            num_samples: worlds,
            flip_prob,
            test_indices: surrogates.iter().map(|s| s.test_index).collect(),
            predicate: describe(surrogates),
        },
        diagnostic: None,
    })
}

/// Defined labels with `ps >= tau`, highest first, optionally truncated.
pub fn rank_and_threshold(report: &PsReport, tau: f64, top_k: Option<usize>) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid(format!("threshold must lie in [0, 1], got {tau}")));
    }
    let mut ranked: Vec<&PsEstimate> = report
        .estimates
        .iter()
        .filter(|e| e.defined && e.ps >= tau)
        .collect();
    ranked.sort_by(|a, b| b.ps.total_cmp(&a.ps).then(a.index.cmp(&b.index)));
    let mut out: Vec<usize> = ranked.into_iter().map(|e| e.index).collect();
    if let Some(k) = top_k {
        out.truncate(k);
    }
    Ok(out)
}
