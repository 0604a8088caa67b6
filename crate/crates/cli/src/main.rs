use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use labelcause::dataset::{
    gen_2gauss, gen_concentric, inject_noise, load_csv, save_csv, split, Label, NoiseSpec, Selector,
};
use labelcause::document::{
    Document, KIND_EVAL_REPORT, KIND_NOISE_RECORD, KIND_PS_REPORT, KIND_TRAINED_MODEL,
};
use labelcause::engine::{estimate_ps_with, Aggregation, PriorConfig, PsReport, SamplerOptions};
use labelcause::gbdt::GbdtHyper;
use labelcause::harness::{
    find_new_misclassifications, run_workflow, write_multi_test_csv, write_sweep_csv, EvalReport,
    WorkflowConfig,
};
use labelcause::logreg::LrHyper;
use labelcause::model::{Algorithm, Learner, Trained};

#[derive(Parser)]
#[command(
    name = "labelcause",
    version,
    about = "Find the training labels behind test misclassifications"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV
    Gen(GenArgs),
    /// Split a CSV into train, test and validation files
    Split(SplitArgs),
    /// Corrupt labels and record which ones changed
    Noise(NoiseArgs),
    /// Train a model and record its profile
    Train(TrainArgs),
    /// Score every training label against chosen test misclassifications
    Debug(DebugArgs),
    /// Run the full noise-injection experiment from a config file
    Eval(EvalArgs),
    /// Run the experiment and write the threshold sweep as CSV
    Sweep(EvalArgs),
}

#[derive(Args, Serialize)]
struct Common {
    /// Random seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (results do not depend on this)
    #[arg(long)]
    #[serde(skip)]
    threads: Option<usize>,
    /// Output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum DatasetKind {
    #[value(name = "2gauss")]
    #[serde(rename = "2gauss")]
    TwoGauss,
    Concentric,
}

#[derive(Args, Serialize)]
struct GenArgs {
    #[arg(long, value_enum)]
    dataset: DatasetKind,
    #[arg(long)]
    n: usize,
    /// Distance between the two Gaussian centers
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    inner_radius: f64,
    #[arg(long, default_value_t = 2.0)]
    outer_radius: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    test_frac: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum NoiseModeArg {
    Random,
    Systematic,
}

#[derive(Args, Serialize)]
struct NoiseArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = NoiseModeArg::Random)]
    mode: NoiseModeArg,
    /// Fraction of labels flipped in random mode
    #[arg(long, default_value_t = 0.1)]
    rate: f64,
    /// Feature tested by the systematic selector
    #[arg(long)]
    feature: Option<usize>,
    /// Select points whose feature exceeds this value
    #[arg(long, conflicts_with_all = ["below", "equals", "top_fraction"])]
    above: Option<f64>,
    #[arg(long, conflicts_with_all = ["equals", "top_fraction"])]
    below: Option<f64>,
    #[arg(long, conflicts_with = "top_fraction")]
    equals: Option<f64>,
    /// Select this fraction of points with the largest feature values
    #[arg(long)]
    top_fraction: Option<f64>,
    /// Label forced onto selected points
    #[arg(long, allow_hyphen_values = true)]
    forced_label: Option<i8>,
    /// Noise record path [default: <out>.record.json]
    #[arg(long)]
    record: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum AlgoArg {
    Lr,
    Gbdt,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Lr => Algorithm::Lr,
            AlgoArg::Gbdt => Algorithm::Gbdt,
        }
    }
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long, value_enum)]
    algo: AlgoArg,
    #[arg(long)]
    data: PathBuf,
    /// Gradient steps (lr)
    #[arg(long)]
    iterations: Option<usize>,
    /// Step size (lr)
    #[arg(long)]
    step_size: Option<f64>,
    /// L2 penalty (lr)
    #[arg(long)]
    l2: Option<f64>,
    /// Number of trees (gbdt)
    #[arg(long)]
    trees: Option<usize>,
    /// Maximum tree depth (gbdt)
    #[arg(long)]
    depth: Option<usize>,
    /// Learning rate (gbdt)
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Minimum points per leaf (gbdt)
    #[arg(long)]
    min_leaf: Option<usize>,
    #[command(flatten)]
    common: Common,
}

impl TrainArgs {
    fn learner(&self) -> Result<Learner> {
        let lr_only = [
            self.iterations.is_some(),
            self.step_size.is_some(),
            self.l2.is_some(),
        ];
        let gbdt_only = [
            self.trees.is_some(),
            self.depth.is_some(),
            self.learning_rate.is_some(),
            self.min_leaf.is_some(),
        ];
        Ok(match self.algo {
            AlgoArg::Lr => {
                ensure!(
                    !gbdt_only.contains(&true),
                    "tree options given for --algo lr"
                );
                let d = LrHyper::default();
                Learner::Lr(LrHyper {
                    iterations: self.iterations.unwrap_or(d.iterations),
                    step_size: self.step_size.unwrap_or(d.step_size),
                    l2_penalty: self.l2.unwrap_or(d.l2_penalty),
                })
            }
            AlgoArg::Gbdt => {
                ensure!(
                    !lr_only.contains(&true),
                    "gradient-step options given for --algo gbdt"
                );
                let d = GbdtHyper::default();
                Learner::Gbdt(GbdtHyper {
                    num_trees: self.trees.unwrap_or(d.num_trees),
                    max_depth: self.depth.unwrap_or(d.max_depth),
                    learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
                    min_leaf_size: self.min_leaf.unwrap_or(d.min_leaf_size),
                })
            }
        })
    }
}

#[derive(Serialize, serde::Deserialize)]
struct TrainConfig {
    data: PathBuf,
    learner: Learner,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum AggregationArg {
    Conjunction,
    PerTestMean,
}

#[derive(Args, Serialize)]
struct DebugArgs {
    /// Must match the algorithm of the profile, if given
    #[arg(long, value_enum)]
    algo: Option<AlgoArg>,
    /// Training set the profiled model was trained on
    #[arg(long)]
    train: PathBuf,
    /// Model document written by `train`
    #[arg(long)]
    profile: PathBuf,
    /// Test set holding the misclassified points
    #[arg(long)]
    test: PathBuf,
    /// Comma-separated test indices, or `auto` for new misclassifications
    #[arg(long)]
    tests: String,
    /// Clean training set, required by `--tests auto`
    #[arg(long)]
    clean_train: Option<PathBuf>,
    /// Number of combined misclassifications used by `--tests auto`
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = labelcause::engine::DEFAULT_NUM_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = labelcause::engine::DEFAULT_FLIP_PROB)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = AggregationArg::Conjunction)]
    aggregation: AggregationArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Workflow configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Also write the threshold sweep here (eval only)
    #[arg(long)]
    sweep_csv: Option<PathBuf>,
    /// Also write the multi-test curve here
    #[arg(long)]
    multi_test_csv: Option<PathBuf>,
    /// Override every seed in the config
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    let threads = match &command {
        Command::Gen(a) => a.common.threads,
        Command::Split(a) => a.common.threads,
        Command::Noise(a) => a.common.threads,
        Command::Train(a) => a.common.threads,
        Command::Debug(a) => a.common.threads,
        Command::Eval(a) | Command::Sweep(a) => a.threads,
    };
    if let Some(t) = threads {
        ensure!(t >= 1, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Split(a) => cmd_split(&a),
        Command::Noise(a) => cmd_noise(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Debug(a) => cmd_debug(&a),
        Command::Eval(a) => cmd_eval(&a, false),
        Command::Sweep(a) => cmd_eval(&a, true),
    }
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let ds = match a.dataset {
        DatasetKind::TwoGauss => gen_2gauss(a.n, a.separation, a.common.seed)?,
        DatasetKind::Concentric => {
            gen_concentric(a.n, a.inner_radius, a.outer_radius, a.common.seed)?
        }
    };
    save_csv(&ds, &a.common.out).with_context(|| format!("writing {}", a.common.out.display()))?;
    println!(
        "wrote {} points ({} labeled -1, {} labeled 1) to {}",
        ds.len(),
        ds.count_label(Label::Neg),
        ds.count_label(Label::Pos),
        a.common.out.display()
    );
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let ds = load_csv(&a.data)?;
    let (train, test, validation) = split(&ds, a.train_frac, a.test_frac, a.common.seed)?;
    std::fs::create_dir_all(&a.common.out)
        .with_context(|| format!("creating {}", a.common.out.display()))?;
    for (name, part) in [
        ("train", &train),
        ("test", &test),
        ("validation", &validation),
    ] {
        save_csv(part, a.common.out.join(format!("{name}.csv")))?;
    }
    println!(
        "train {} / test {} / validation {} in {}",
        train.len(),
        test.len(),
        validation.len(),
        a.common.out.display()
    );
    Ok(())
}

fn parse_label(v: i8) -> Result<Label> {
    Label::try_from(v).map_err(|_| anyhow::anyhow!("labels are -1 or 1, got {v}"))
}

fn cmd_noise(a: &NoiseArgs) -> Result<()> {
    let ds = load_csv(&a.data)?;
    let spec = match a.mode {
        NoiseModeArg::Random => NoiseSpec::random(a.rate, a.common.seed),
        NoiseModeArg::Systematic => {
            let feature = a.feature.context("systematic noise needs --feature")?;
            let forced = parse_label(
                a.forced_label
                    .context("systematic noise needs --forced-label")?,
            )?;
            let selector = match (a.above, a.below, a.equals, a.top_fraction) {
                (Some(threshold), ..) => Selector::Above { feature, threshold },
                (_, Some(threshold), ..) => Selector::Below { feature, threshold },
                (_, _, Some(value), _) => Selector::Equals { feature, value },
                (.., Some(fraction)) => Selector::top_fraction(&ds, feature, fraction)?,
                _ => bail!(
                    "systematic noise needs one of --above, --below, --equals, --top-fraction"
                ),
            };
            NoiseSpec::systematic(selector, forced, a.common.seed)
        }
    };
    let (noisy, record) = inject_noise(&ds, &spec)?;
    save_csv(&noisy, &a.common.out)?;
    let record_path = a
        .record
        .clone()
        .unwrap_or_else(|| with_suffix(&a.common.out, ".record.json"));
    Document::new(
        KIND_NOISE_RECORD,
        json!({ "args": a, "spec": spec }),
        &record,
    )
    .write(&record_path)?;
    println!(
        "flipped {} of {} labels; record in {}",
        record.len(),
        ds.len(),
        record_path.display()
    );
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let learner = a.learner()?;
    let ds = load_csv(&a.data)?;
    let trained = learner.train(&ds)?;
    let config = TrainConfig {
        data: a.data.clone(),
        learner,
    };
    let train_error = trained.error_rate(&ds)?;
    Document::new(KIND_TRAINED_MODEL, serde_json::to_value(&config)?, &trained)
        .write(&a.common.out)?;
    println!(
        "trained {} on {} points, training error {train_error:.4}; wrote {}",
        trained.algorithm(),
        ds.len(),
        a.common.out.display()
    );
    Ok(())
}

fn parse_indices(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .with_context(|| format!("bad test index {t:?}"))
        })
        .collect()
}

fn cmd_debug(a: &DebugArgs) -> Result<()> {
    let doc = Document::<Trained>::read(&a.profile, KIND_TRAINED_MODEL)?;
    let model = doc.content;
    if let Some(algo) = a.algo {
        ensure!(
            Algorithm::from(algo) == model.algorithm(),
            "--algo {} does not match the {} profile in {}",
            Algorithm::from(algo),
            model.algorithm(),
            a.profile.display()
        );
    }
    let train = load_csv(&a.train)?;
    let test = load_csv(&a.test)?;

    let tests = if a.tests == "auto" {
        let clean_path = a
            .clean_train
            .as_ref()
            .context("--tests auto needs --clean-train to tell new misclassifications apart")?;
        let cfg: TrainConfig = serde_json::from_value(doc.config)
            .with_context(|| format!("{}: missing training config", a.profile.display()))?;
        let clean = cfg.learner.train(&load_csv(clean_path)?)?;
        let new = find_new_misclassifications(&clean, &model, &test)?;
        ensure!(
            !new.is_empty(),
            "no new misclassifications between the clean and noisy models"
        );
        ensure!(a.k >= 1, "--k must be at least 1");
        new.into_iter().take(a.k).collect()
    } else {
        parse_indices(&a.tests)?
    };

    let mut surrogates = Vec::with_capacity(tests.len());
    for &t in &tests {
        ensure!(
            t < test.len(),
            "test index {t} out of range for {} points",
            test.len()
        );
        let p = test.point(t);
        if model.classify(&p.features)? == p.label {
            eprintln!("warning: test point {t} is classified correctly");
        }
        surrogates.push(model.surrogate(&train, &p.features, t, p.label)?);
    }
    let prior = PriorConfig {
        flip_prob: a.epsilon,
        seed: a.common.seed,
        num_samples: a.samples,
    };
    let opts = SamplerOptions {
        aggregation: match a.aggregation {
            AggregationArg::Conjunction => Aggregation::Conjunction,
            AggregationArg::PerTestMean => Aggregation::PerTestMean,
        },
        ..SamplerOptions::default()
    };
    let report: PsReport = estimate_ps_with(&surrogates, &train.labels(), &prior, &opts)?;
    if let Some(d) = &report.diagnostic {
        bail!("{d}");
    }
    Document::new(
        KIND_PS_REPORT,
        json!({ "args": a, "tests": tests }),
        &report,
    )
    .write(&a.common.out)?;
    println!(
        "{} accepted / {} rejected worlds; top label {} (ps {:.3}); wrote {}",
        report.accepted_worlds,
        report.rejected_worlds,
        report.estimates[0].index,
        report.estimates[0].ps,
        a.common.out.display()
    );
    Ok(())
}

fn load_workflow(a: &EvalArgs) -> Result<WorkflowConfig> {
    let text = std::fs::read_to_string(&a.config)
        .with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg: WorkflowConfig =
        serde_json::from_str(&text).map_err(|e| labelcause::Error::Parse {
            path: a.config.clone(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
    if let Some(seed) = a.seed {
        reseed(&mut cfg, seed);
    }
    Ok(cfg)
}

fn reseed(cfg: &mut WorkflowConfig, seed: u64) {
    use labelcause::harness::{DatasetSource, NoiseConfig};
    match &mut cfg.dataset {
        DatasetSource::TwoGauss { seed: s, .. } | DatasetSource::Concentric { seed: s, .. } => {
            *s = seed
        }
        DatasetSource::Csv { .. } => {}
    }
    match &mut cfg.noise {
        NoiseConfig::Random { seed: s, .. }
        | NoiseConfig::Systematic { seed: s, .. }
        | NoiseConfig::SystematicTop { seed: s, .. } => *s = seed,
    }
    cfg.split.seed = seed;
    cfg.prior.seed = seed;
}

fn cmd_eval(a: &EvalArgs, sweep_only: bool) -> Result<()> {
    let mut cfg = load_workflow(a)?;
    if sweep_only || a.sweep_csv.is_some() {
        cfg.sweep = true;
    }
    let report: EvalReport = run_workflow(&cfg)?;
    for d in &report.diagnostics {
        eprintln!("note: {d}");
    }
    if sweep_only {
        let curve = report
            .sweep_curve
            .as_ref()
            .context("no sweep was produced: the noise caused no new misclassifications")?;
        write_sweep_csv(&a.out, curve)?;
        println!("wrote {} sweep rows to {}", curve.len(), a.out.display());
        return Ok(());
    }
    if let (Some(path), Some(curve)) = (&a.sweep_csv, &report.sweep_curve) {
        write_sweep_csv(path, curve)?;
    }
    if let (Some(path), Some(curve)) = (&a.multi_test_csv, &report.multi_test_curve) {
        write_multi_test_csv(path, curve)?;
    }
    Document::new(KIND_EVAL_REPORT, serde_json::to_value(&cfg)?, &report).write(&a.out)?;
    let v = report.validation_errors;
    println!(
        "precision {} | validation error clean {:.4} noisy {:.4} fixed {:.4} | wrote {}",
        report
            .precision
            .map_or_else(|| "undefined".to_string(), |p| format!("{p:.3}")),
        v.clean,
        v.noisy,
        v.fixed,
        a.out.display()
    );
    eprintln!("runtime {:.2}s", report.runtime_seconds);
    Ok(())
}
