//! The end-to-end experiment: corrupt some training labels, find the test
//! points that became wrong, ask the engine which labels caused them, and
//! check the answer against the recorded corruption.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    gen_2gauss, gen_concentric, inject_noise, load_csv, split, Dataset, Label, NoiseRecord,
    NoiseSpec, Selector,
};
use crate::engine::{
    estimate_ps_with, rank_and_threshold, Aggregation, PriorConfig, PsReport, SamplerOptions,
};
use crate::error::{invalid, Result};
use crate::model::{Learner, Trained};
use crate::surrogate::LinearSurrogate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSource {
    TwoGauss {
        n: usize,
        separation: f64,
        seed: u64,
    },
    Concentric {
        n: usize,
        inner_radius: f64,
        outer_radius: f64,
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::TwoGauss {
                n,
                separation,
                seed,
            } => gen_2gauss(*n, *separation, *seed),
            DatasetSource::Concentric {
                n,
                inner_radius,
                outer_radius,
                seed,
            } => gen_concentric(*n, *inner_radius, *outer_radius, *seed),
            DatasetSource::Csv { path } => load_csv(path),
        }
    }
}

/// Train and test fractions; the remainder is the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            test_frac: 0.2,
            seed: 0,
        }
    }
}

/// Noise to inject into the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum NoiseConfig {
    Random {
        rate: f64,
        seed: u64,
    },
    Systematic {
        selector: Selector,
        forced_label: Label,
        seed: u64,
    },
    /// Systematic noise on the points whose `feature` is in the top
    /// `fraction` of the training split.
    SystematicTop {
        feature: usize,
        fraction: f64,
        forced_label: Label,
        seed: u64,
    },
}

impl NoiseConfig {
    pub fn resolve(&self, train: &Dataset) -> Result<NoiseSpec> {
        Ok(match self {
            NoiseConfig::Random { rate, seed } => NoiseSpec::random(*rate, *seed),
            NoiseConfig::Systematic {
                selector,
                forced_label,
                seed,
            } => NoiseSpec::systematic(selector.clone(), *forced_label, *seed),
            NoiseConfig::SystematicTop {
                feature,
                fraction,
                forced_label,
                seed,
            } => NoiseSpec::systematic(
                Selector::top_fraction(train, *feature, *fraction)?,
                *forced_label,
                *seed,
            ),
        })
    }
}

/// How many ranked labels are proposed as causes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "by", content = "value")]
pub enum CauseSelection {
    /// As many as were injected (precision at |noise|).
    #[default]
    InjectedCount,
    TopK(usize),
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitConfig,
    pub learner: Learner,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    /// Number of new misclassifications combined into one error predicate.
    #[serde(default = "one")]
    pub num_tests: usize,
    #[serde(default)]
    pub causes: CauseSelection,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub sweep: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub multi_test_ks: Vec<usize>,
}

fn one() -> usize {
    1
}

impl WorkflowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tests == 0 {
            return Err(invalid("number of combined test points must be at least 1"));
        }
        if self.multi_test_ks.contains(&0) {
            return Err(invalid("multi-test k values must be at least 1"));
        }
        match self.causes {
            CauseSelection::TopK(0) => return Err(invalid("top_k must be at least 1")),
            CauseSelection::Threshold(t) if !(0.0..=1.0).contains(&t) => {
                return Err(invalid(format!("threshold must lie in [0, 1], got {t}")))
            }
            _ => {}
        }
        self.learner.validate()?;
        self.prior.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationErrors {
    pub clean: f64,
    pub noisy: f64,
    pub fixed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Smallest PS among the flipped labels; 1 for the empty prefix.
    pub tau: f64,
    pub flips: usize,
    pub validation_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiTestPoint {
    pub k: usize,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// |suggested ∩ injected| / |suggested|; absent when nothing is suggested.
    pub precision: Option<f64>,
    /// |suggested ∩ injected| / |injected|.
    pub recall: Option<f64>,
    pub validation_errors: ValidationErrors,
    pub training_size: usize,
    pub injected: usize,
    pub new_misclassifications: Vec<usize>,
    /// The new misclassifications the error predicate was built from.
    pub debugged_tests: Vec<usize>,
    pub suggested_causes: Vec<usize>,
    pub accepted_worlds: u64,
    pub rejected_worlds: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_curve: Option<Vec<SweepPoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_test_curve: Option<Vec<MultiTestPoint>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    /// Wall-clock time; kept out of the serialized report so reruns compare
    /// byte for byte.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

/// Test indices the noisy model gets wrong and the clean model gets right.
pub fn find_new_misclassifications(
    clean: &Trained,
    noisy: &Trained,
    test: &Dataset,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, p) in test.points().iter().enumerate() {
        if noisy.classify(&p.features)? != p.label && clean.classify(&p.features)? == p.label {
            out.push(i);
        }
    }
    Ok(out)
}

/// Flips the suggested labels and retrains with the real trainer.
pub fn fix_and_retrain(
    train_noisy: &Dataset,
    suggestions: &[usize],
    learner: &Learner,
) -> Result<Trained> {
    learner.train(&train_noisy.with_flipped(suggestions)?)
}

/// Everything up to, but not including, PS estimation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub validation: Dataset,
    pub noisy_train: Dataset,
    pub record: NoiseRecord,
    pub clean: Trained,
    pub noisy: Trained,
    pub new_misclassifications: Vec<usize>,
}

impl Prepared {
    pub fn new(cfg: &WorkflowConfig) -> Result<Self> {
        cfg.validate()?;
        let data = cfg.dataset.load()?;
        let (train, test, validation) = split(
            &data,
            cfg.split.train_frac,
            cfg.split.test_frac,
            cfg.split.seed,
        )?;
        let clean = cfg.learner.train(&train)?;
        let (noisy_train, record) = inject_noise(&train, &cfg.noise.resolve(&train)?)?;
        let noisy = cfg.learner.train(&noisy_train)?;
        let new_misclassifications = find_new_misclassifications(&clean, &noisy, &test)?;
        Ok(Self {
            train,
            test,
            validation,
            noisy_train,
            record,
            clean,
            noisy,
            new_misclassifications,
        })
    }

    /// Surrogates of the noisy model for the given test indices.
    pub fn surrogates(&self, tests: &[usize]) -> Result<Vec<LinearSurrogate>> {
        tests
            .iter()
            .map(|&t| {
                let p = self.test.point(t);
                self.noisy
                    .surrogate(&self.noisy_train, &p.features, t, p.label)
            })
            .collect()
    }

    pub fn debug(&self, cfg: &WorkflowConfig, tests: &[usize]) -> Result<PsReport> {
        let opts = SamplerOptions {
            aggregation: cfg.aggregation,
            ..SamplerOptions::default()
        };
        estimate_ps_with(
            &self.surrogates(tests)?,
            &self.noisy_train.labels(),
            &cfg.prior,
            &opts,
        )
    }

    /// Proposed causes: ranked labels with positive PS, cut per `selection`.
    pub fn select(&self, report: &PsReport, selection: CauseSelection) -> Result<Vec<usize>> {
        let ranked = match selection {
            CauseSelection::InjectedCount => {
                rank_and_threshold(report, 0.0, Some(self.record.len()))?
            }
            CauseSelection::TopK(k) => rank_and_threshold(report, 0.0, Some(k))?,
            CauseSelection::Threshold(t) => rank_and_threshold(report, t, None)?,
        };
        Ok(ranked
            .into_iter()
            .filter(|&i| report.get(i).is_some_and(|e| e.ps > 0.0))
            .collect())
    }

    pub fn precision(&self, suggested: &[usize]) -> Option<f64> {
        (!suggested.is_empty()).then(|| self.hits(suggested) as f64 / suggested.len() as f64)
    }

    pub fn recall(&self, suggested: &[usize]) -> Option<f64> {
        (!self.record.is_empty()).then(|| self.hits(suggested) as f64 / self.record.len() as f64)
    }

    fn hits(&self, suggested: &[usize]) -> usize {
        suggested
            .iter()
            .filter(|&&i| self.record.contains(i))
            .count()
    }
}

/// Runs the workflow on the current rayon pool.
pub fn run_workflow(cfg: &WorkflowConfig) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    let prep = Prepared::new(cfg)?;
    let clean_err = prep.clean.error_rate(&prep.validation)?;
    let noisy_err = prep.noisy.error_rate(&prep.validation)?;
    let mut diagnostics = Vec::new();

    let mut report = EvalReport {
        precision: None,
        recall: None,
        validation_errors: ValidationErrors {
            clean: clean_err,
            noisy: noisy_err,
            fixed: noisy_err,
        },
        training_size: prep.train.len(),
        injected: prep.record.len(),
        new_misclassifications: prep.new_misclassifications.clone(),
        debugged_tests: Vec::new(),
        suggested_causes: Vec::new(),
        accepted_worlds: 0,
        rejected_worlds: 0,
        sweep_curve: None,
        multi_test_curve: None,
        diagnostics: Vec::new(),
        runtime_seconds: 0.0,
    };

    if prep.new_misclassifications.is_empty() {
        report.diagnostics.push(
            "the injected noise caused no new test misclassifications; nothing to debug".into(),
        );
        report.runtime_seconds = start.elapsed().as_secs_f64();
        return Ok(report);
    }

    let available = prep.new_misclassifications.len();
    if available < cfg.num_tests {
        diagnostics.push(format!(
            "asked to combine {} test points but only {available} new misclassifications exist",
            cfg.num_tests
        ));
    }
    let tests = prep.new_misclassifications[..cfg.num_tests.min(available)].to_vec();
    let ps = prep.debug(cfg, &tests)?;
    if let Some(d) = &ps.diagnostic {
        diagnostics.push(d.clone());
    }
    let suggested = prep.select(&ps, cfg.causes)?;
    let fixed = fix_and_retrain(&prep.noisy_train, &suggested, &cfg.learner)?;

    report.precision = prep.precision(&suggested);
    report.recall = prep.recall(&suggested);
    report.validation_errors.fixed = fixed.error_rate(&prep.validation)?;
    report.debugged_tests = tests;
    report.accepted_worlds = ps.accepted_worlds;
    report.rejected_worlds = ps.rejected_worlds;
    report.suggested_causes = suggested;

    if cfg.sweep {
        report.sweep_curve = Some(threshold_sweep(
            &prep.noisy_train,
            &ps,
            &cfg.learner,
            &prep.validation,
        )?);
    }
    if !cfg.multi_test_ks.is_empty() {
        let (curve, warning) = multi_test_curve(&prep, cfg, &cfg.multi_test_ks)?;
        diagnostics.extend(warning);
        report.multi_test_curve = Some(curve);
    }
    report.diagnostics = diagnostics;
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Runs the workflow with parallelism capped at `threads`.
pub fn run_workflow_with_threads(cfg: &WorkflowConfig, threads: usize) -> Result<EvalReport> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?
        .install(|| run_workflow(cfg))
}

/// Validation error after flipping each prefix of the PS ranking, one row per
/// distinct positive PS level plus the empty prefix.
pub fn threshold_sweep(
    train_noisy: &Dataset,
    report: &PsReport,
    learner: &Learner,
    validation: &Dataset,
) -> Result<Vec<SweepPoint>> {
    let mut ranked: Vec<(usize, f64)> = report
        .estimates
        .iter()
        .filter(|e| e.defined && e.ps > 0.0)
        .map(|e| (e.index, e.ps))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut cuts = vec![(1.0, 0)];
    for (pos, &(_, ps)) in ranked.iter().enumerate() {
        let last_of_level = ranked.get(pos + 1).is_none_or(|&(_, next)| next < ps);
        if last_of_level {
            cuts.push((ps, pos + 1));
        }
    }
    let order: Vec<usize> = ranked.iter().map(|&(i, _)| i).collect();
    cuts.par_iter()
        .map(|&(tau, flips)| {
            let model = fix_and_retrain(train_noisy, &order[..flips], learner)?;
            Ok(SweepPoint {
                tau,
                flips,
                validation_error: model.error_rate(validation)?,
            })
        })
        .collect()
}

/// Precision when the first `k` new misclassifications are debugged jointly,
/// for each `k`. Values of `k` beyond the available count are dropped and
/// reported in the returned warning.
pub fn multi_test_curve(
    prep: &Prepared,
    cfg: &WorkflowConfig,
    ks: &[usize],
) -> Result<(Vec<MultiTestPoint>, Option<String>)> {
    let available = prep.new_misclassifications.len();
    let (usable, dropped): (Vec<usize>, Vec<usize>) = ks.iter().partition(|&&k| k <= available);
    let warning = (!dropped.is_empty()).then(|| {
        format!("multi-test curve skipped k = {dropped:?}: only {available} new misclassifications")
    });
    let curve = usable
        .into_iter()
        .map(|k| {
            let report = prep.debug(cfg, &prep.new_misclassifications[..k])?;
            let suggested = prep.select(&report, cfg.causes)?;
            Ok(MultiTestPoint {
                k,
                precision: prep.precision(&suggested),
            })
        })
        .collect::<Result<_>>()?;
    Ok((curve, warning))
}

pub fn write_sweep_csv(path: impl AsRef<Path>, curve: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    for p in curve {
        w.serialize(p).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_multi_test_csv(path: impl AsRef<Path>, curve: &[MultiTestPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["k", "precision"]).map_err(csv_io)?;
    for p in curve {
        let precision = p.precision.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([p.k.to_string(), precision])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(std::io::Error::other(e.to_string()))
}
