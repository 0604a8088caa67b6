use proptest::prelude::*;

use labelcause::dataset::Label;
use labelcause::engine::{
    estimate_ps, estimate_ps_with, exact_ps, rank_and_threshold, sample_world, PriorConfig,
    SamplerOptions,
};
use labelcause::surrogate::{Coefficients, LinearSurrogate, MarginState};

fn dense(bias: f64, w: Vec<f64>, expected: Label) -> LinearSurrogate {
    LinearSurrogate {
        test_index: 0,
        bias,
        coeffs: Coefficients::Dense { values: w },
        expected_label: expected,
    }
}

fn label(b: bool) -> Label {
    if b {
        Label::Pos
    } else {
        Label::Neg
    }
}

fn prior(seed: u64, num_samples: usize) -> PriorConfig {
    PriorConfig {
        flip_prob: 0.1,
        seed,
        num_samples,
    }
}

/// Voters all saying +1 against an expected -1: the error is the current state.
fn voting(weights: &[f64]) -> (Vec<LinearSurrogate>, Vec<Label>) {
    let s = dense(-0.5, weights.to_vec(), Label::Neg);
    (vec![s], vec![Label::Pos; weights.len()])
}

fn task() -> impl Strategy<Value = (LinearSurrogate, Vec<Label>)> {
    (2usize..10).prop_flat_map(|n| {
        (
            -2.0f64..2.0,
            prop::collection::vec(-1.5f64..1.5, n),
            prop::collection::vec(any::<bool>(), n),
            any::<bool>(),
        )
            .prop_map(|(b, w, y, e)| (dense(b, w, label(e)), y.into_iter().map(label).collect()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn estimates_are_probabilities((s, y) in task(), seed in any::<u64>()) {
        let r = estimate_ps(&[s], &y, &prior(seed, 2_000)).unwrap();
        prop_assert_eq!(r.estimates.len(), y.len());
        prop_assert_eq!(r.accepted_worlds + r.rejected_worlds, 2_000);
        for e in &r.estimates {
            prop_assert!((0.0..=1.0).contains(&e.ps));
            prop_assert!(e.successes <= e.trials);
            prop_assert_eq!(e.defined, e.trials > 0);
        }
    }

    #[test]
    fn thread_count_does_not_change_report((s, y) in task(), seed in any::<u64>()) {
        let p = prior(seed, 3_000);
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = serial.install(|| estimate_ps(std::slice::from_ref(&s), &y, &p)).unwrap();
        let b = wide.install(|| estimate_ps(std::slice::from_ref(&s), &y, &p)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn flip_delta_matches_recomputation((s, y) in task(), flips in prop::collection::vec(0usize..10, 1..20)) {
        let mut state = MarginState::new(&s, y.clone()).unwrap();
        for i in flips.into_iter().filter(|&i| i < y.len()) {
            state.flip(i).unwrap();
            let full = s.margin(state.world()).unwrap();
            prop_assert!((state.margin() - full).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_worlds_are_reproducible((_, y) in task(), seed in any::<u64>(), stream in any::<u64>()) {
        let p = prior(seed, 1);
        let w = sample_world(&p, &y, stream).unwrap();
        prop_assert_eq!(w.labels.len(), y.len());
        prop_assert_eq!(sample_world(&p, &y, stream).unwrap(), w);
    }

    #[test]
    fn duplicated_test_points_leave_the_report_unchanged((s, y) in task(), seed in any::<u64>()) {
        let p = prior(seed, 2_000);
        let once = estimate_ps(std::slice::from_ref(&s), &y, &p).unwrap();
        let twice = estimate_ps(&[s.clone(), s], &y, &p).unwrap();
        prop_assert_eq!(once.estimates, twice.estimates);
        prop_assert_eq!(once.accepted_worlds, twice.accepted_worlds);
    }

    #[test]
    fn ranking_respects_threshold((s, y) in task(), tau in 0.0f64..=1.0) {
        let r = exact_ps(&[s], &y, 0.1).unwrap();
        let picked = rank_and_threshold(&r, tau, None).unwrap();
        let ps = r.ps_by_index();
        prop_assert!(picked.iter().all(|&i| ps[i] >= tau));
        prop_assert!(picked.windows(2).all(|w| ps[w[0]] >= ps[w[1]]));
    }
}

#[test]
fn exact_ps_is_non_decreasing_in_voter_weight() {
    let mut last = -1.0;
    for w in [0.01, 0.03, 0.55] {
        let (s, y) = voting(&[w, 0.2, 0.2, 0.2, 0.2]);
        let ps = exact_ps(&s, &y, 0.2).unwrap().ps_by_index()[0];
        assert!(ps >= last, "weight {w}: {ps} < {last}");
        last = ps;
    }
}

#[test]
fn sampler_converges_to_enumeration() {
    let weights = [0.9, 0.7, 0.5, 0.3, 0.2, 0.2, 0.1, 0.1];
    let (s, y) = voting(&weights);
    let exact = exact_ps(&s, &y, 0.1).unwrap().ps_by_index();
    let sampled = estimate_ps(&s, &y, &prior(11, 200_000))
        .unwrap()
        .ps_by_index();
    for (i, (a, b)) in exact.iter().zip(&sampled).enumerate() {
        assert!((a - b).abs() < 0.05, "label {i}: exact {a}, sampled {b}");
    }
}

#[test]
fn empty_prior_sample_is_rejected() {
    let (s, y) = voting(&[1.0, 1.0]);
    assert!(estimate_ps_with(&s, &y, &prior(0, 0), &SamplerOptions::default()).is_err());
}
