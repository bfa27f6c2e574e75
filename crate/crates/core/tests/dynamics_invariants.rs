use anneal_range::dynamics::{evolve, sample_outcomes, BasisMode, BathModel, EvolveOptions, PopulationState};
use anneal_range::gadget::{build_gadget, OutcomeClass};
use anneal_range::schedule::{reverse_waveform, Device, ScheduleTable, MAX_RATE};
use proptest::prelude::*;

fn run(j_t: f64, s_star: f64, tau: f64, eta: f64) -> (PopulationState, anneal_range::gadget::Gadget) {
    let g = build_gadget(j_t).unwrap();
    let sched = ScheduleTable::synthetic(Device::LowNoise);
    let bath = BathModel::default().with_eta(eta);
    let w = reverse_waveform(s_star, tau, MAX_RATE).unwrap();
    let state = evolve(&g.problem, &w, &sched, &bath, &EvolveOptions::default(), &g.spec.start_state).unwrap();
    (state, g)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn populations_stay_normalized(j_t in 0.0f64..=1.0, s_star in 0.45f64..0.8, tau in 1.0f64..20.0, eta in 0.0f64..0.1) {
        let (state, g) = run(j_t, s_star, tau, eta);
        prop_assert!((state.total() - 1.0).abs() < 1e-9);
        prop_assert!(state.populations.iter().all(|&p| p >= -1e-12));
        let w = state.class_weights(&g.spec);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn without_coupling_the_start_state_is_kept() {
    let (state, g) = run(1.0, 0.5, 20.0, 0.0);
    let w = state.class_weights(&g.spec);
    assert!((w[OutcomeClass::Start.index()] - 1.0).abs() < 1e-12);
}

#[test]
fn deep_reversal_reaches_the_ground_state() {
    let (state, g) = run(0.0, 0.45, 100.0, BathModel::default().eta);
    let w = state.class_weights(&g.spec);
    assert!(w[OutcomeClass::Start.index()] < 0.05, "{w:?}");
}

#[test]
fn sampling_is_seeded_and_complete() {
    let (state, g) = run(1.0, 0.6, 5.0, BathModel::default().eta);
    let a = sample_outcomes(&state, 10_000, 42).unwrap();
    let b = sample_outcomes(&state, 10_000, 42).unwrap();
    assert_eq!(a, b);
    let counts = a.class_counts(&g.spec).unwrap();
    assert_eq!(counts.iter().sum::<u64>(), 10_000);
    let w = state.class_weights(&g.spec);
    for (c, p) in counts.iter().zip(w) {
        let se = (p * (1.0 - p) / 10_000.0).sqrt().max(1e-4);
        assert!((*c as f64 / 10_000.0 - p).abs() < 5.0 * se, "{counts:?} vs {w:?}");
    }
    assert!(sample_outcomes(&state, 0, 1).is_err());
}

#[test]
fn bath_rejects_bad_parameters() {
    assert!(BathModel::new(-1.0, 0.26, 100.0, BasisMode::ComputationalBasis).is_err());
    assert!(BathModel::new(0.01, 0.0, 100.0, BasisMode::ComputationalBasis).is_err());
    assert!(BathModel::default().with_linewidth(-0.5).is_err());
}
