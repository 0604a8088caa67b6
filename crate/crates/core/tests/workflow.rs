use labelcause::dataset::Label;
use labelcause::document::{Document, KIND_EVAL_REPORT, KIND_WORKFLOW_CONFIG};
use labelcause::engine::{Aggregation, PriorConfig};
use labelcause::harness::{
    fix_and_retrain, multi_test_curve, run_workflow, run_workflow_with_threads, CauseSelection,
    DatasetSource, EvalReport, NoiseConfig, Prepared, SplitConfig, WorkflowConfig,
};
use labelcause::model::{Algorithm, Learner};

fn systematic(seed: u64) -> WorkflowConfig {
    WorkflowConfig {
        dataset: DatasetSource::TwoGauss {
            n: 600,
            separation: 4.65,
            seed,
        },
        split: SplitConfig {
            seed,
            ..SplitConfig::default()
        },
        learner: Learner::default_for(Algorithm::Gbdt),
        noise: NoiseConfig::SystematicTop {
            feature: 1,
            fraction: 0.1,
            forced_label: Label::Pos,
            seed,
        },
        prior: PriorConfig {
            num_samples: 20_000,
            ..PriorConfig::default()
        },
        num_tests: 1,
        causes: CauseSelection::InjectedCount,
        aggregation: Aggregation::Conjunction,
        sweep: true,
        multi_test_ks: vec![1, 2],
    }
}

fn debuggable() -> (WorkflowConfig, Prepared) {
    (0..32)
        .map(systematic)
        .find_map(|cfg| {
            let prep = Prepared::new(&cfg).unwrap();
            (prep.new_misclassifications.len() >= 2).then_some((cfg, prep))
        })
        .expect("some seed yields two new misclassifications")
}

#[test]
fn workflow_is_deterministic_across_thread_counts() {
    let (cfg, _) = debuggable();
    let a = run_workflow_with_threads(&cfg, 1).unwrap();
    let b = run_workflow_with_threads(&cfg, 4).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn metrics_are_fractions() {
    let (cfg, _) = debuggable();
    let r = run_workflow(&cfg).unwrap();
    let v = &r.validation_errors;
    for e in [v.clean, v.noisy, v.fixed] {
        assert!((0.0..=1.0).contains(&e));
    }
    for p in [r.precision, r.recall].into_iter().flatten() {
        assert!((0.0..=1.0).contains(&p));
    }
    assert!(r.suggested_causes.len() <= r.injected);
    let sweep = r.sweep_curve.unwrap();
    assert_eq!((sweep[0].tau, sweep[0].flips), (1.0, 0));
    assert_eq!(sweep[0].validation_error, v.noisy);
}

#[test]
fn restoring_the_injected_set_recovers_the_clean_model() {
    let (cfg, prep) = debuggable();
    let restored = prep.record.restore(&prep.noisy_train).unwrap();
    assert_eq!(restored, prep.train);
    let fixed = fix_and_retrain(
        &prep.noisy_train,
        &prep.record.flipped_indices,
        &cfg.learner,
    )
    .unwrap();
    assert_eq!(fixed, prep.clean);
}

#[test]
fn single_point_curve_matches_single_test_workflow() {
    let (cfg, prep) = debuggable();
    let report = run_workflow(&cfg).unwrap();
    let (curve, warning) = multi_test_curve(&prep, &cfg, &[1]).unwrap();
    assert!(warning.is_none());
    assert_eq!(curve[0].precision, report.precision);
}

#[test]
fn oversized_k_is_dropped_with_a_warning() {
    let (cfg, prep) = debuggable();
    let too_many = prep.new_misclassifications.len() + 1;
    let (curve, warning) = multi_test_curve(&prep, &cfg, &[1, too_many]).unwrap();
    assert_eq!(curve.len(), 1);
    assert!(warning.unwrap().contains(&too_many.to_string()));
}

#[test]
fn no_new_misclassifications_is_a_diagnostic() {
    let mut cfg = systematic(0);
    cfg.noise = NoiseConfig::Random {
        rate: 0.01,
        seed: 0,
    };
    cfg.learner = Learner::default_for(Algorithm::Lr);
    let cfg = (0..32)
        .map(|s| WorkflowConfig {
            split: SplitConfig {
                seed: s,
                ..cfg.split.clone()
            },
            ..cfg.clone()
        })
        .find(|c| Prepared::new(c).unwrap().new_misclassifications.is_empty())
        .expect("light noise leaves some split untouched");
    let r = run_workflow(&cfg).unwrap();
    assert!(r.precision.is_none());
    assert_eq!(r.validation_errors.fixed, r.validation_errors.noisy);
    assert_eq!(r.diagnostics.len(), 1);
}

#[test]
fn documents_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = debuggable();
    let cfg_path = dir.path().join("cfg.json");
    let config = serde_json::to_value(&cfg).unwrap();
    Document::new(KIND_WORKFLOW_CONFIG, serde_json::Value::Null, cfg.clone())
        .write(&cfg_path)
        .unwrap();
    let back: Document<WorkflowConfig> = Document::read(&cfg_path, KIND_WORKFLOW_CONFIG).unwrap();
    assert_eq!(back.content, cfg);

    let report = run_workflow(&cfg).unwrap();
    let path = dir.path().join("report.json");
    Document::new(KIND_EVAL_REPORT, config, report.clone())
        .write(&path)
        .unwrap();
    let back: Document<EvalReport> = Document::read(&path, KIND_EVAL_REPORT).unwrap();
    assert_eq!(
        serde_json::to_value(&back.content).unwrap(),
        serde_json::to_value(&report).unwrap()
    );
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = systematic(0);
    cfg.num_tests = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = systematic(0);
    cfg.causes = CauseSelection::Threshold(1.5);
    assert!(cfg.validate().is_err());
    let mut cfg = systematic(0);
    cfg.prior.flip_prob = 0.5;
    assert!(cfg.validate().is_err());
}
