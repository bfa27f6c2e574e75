use anneal_range::gadget::{build_gadget, validate_gadget, OutcomeClass, N_QUBITS};
use anneal_range::ising::{hamming, Coupling, IsingProblem, SpinConfig};
use proptest::prelude::*;

fn random_problem(n: usize, fields: Vec<f64>, strengths: Vec<f64>) -> IsingProblem {
    let mut couplings = Vec::new();
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if k < strengths.len() && strengths[k].abs() > 0.05 {
                couplings.push(Coupling { i, j, strength: strengths[k] });
            }
            k += 1;
        }
    }
    IsingProblem::new(n, couplings, fields).unwrap()
}

fn problem_strategy() -> impl Strategy<Value = IsingProblem> {
    (2usize..=7).prop_flat_map(|n| {
        (
            prop::collection::vec(-2.0f64..2.0, n),
            prop::collection::vec(-2.0f64..2.0, n * (n - 1) / 2),
        )
            .prop_map(move |(h, j)| random_problem(n, h, j))
    })
}

proptest! {
    #[test]
    fn gauge_transform_preserves_energies(p in problem_strategy(), mask_bits in any::<u32>(), x in any::<u32>()) {
        let n = p.n_qubits();
        let mask = SpinConfig::from_index(mask_bits as usize % (1 << n), n);
        let cfg = SpinConfig::from_index(x as usize % (1 << n), n);
        let g = p.gauge_transform(&mask).unwrap();
        let e = p.energy(&cfg).unwrap();
        let eg = g.energy(&cfg.gauged(&mask).unwrap()).unwrap();
        prop_assert!((e - eg).abs() < 1e-12);
    }

    #[test]
    fn flip_delta_matches_energy_difference(p in problem_strategy(), x in any::<u32>(), q in any::<u8>()) {
        let n = p.n_qubits();
        let cfg = SpinConfig::from_index(x as usize % (1 << n), n);
        let q = q as usize % n;
        let d = p.energy(&cfg.flipped(q)).unwrap() - p.energy(&cfg).unwrap();
        prop_assert!((p.flip_delta(&cfg, q) - d).abs() < 1e-12);
    }

    #[test]
    fn bit_strings_round_trip(x in 0usize..(1 << 16)) {
        let cfg = SpinConfig::from_index(x, 16);
        let back = SpinConfig::from_bits(&cfg.to_bits()).unwrap();
        prop_assert_eq!(back.index(), x);
        prop_assert_eq!(cfg.get(0) == 1, x >> 15 & 1 == 0);
    }

    #[test]
    fn landscape_holds_for_any_barrier(j_t in 0.0f64..=1.0) {
        let g = build_gadget(j_t).unwrap();
        let r = validate_gadget(&g).unwrap();
        prop_assert!((r.false_minus_true - 0.2).abs() < 1e-12);
        prop_assert!((r.barrier_minus_start - 2.0 * j_t).abs() < 1e-12);
        prop_assert_eq!(r.hamming_start_true, 4);
    }
}

#[test]
fn neighbours_of_the_true_minimum_are_other() {
    let g = build_gadget(0.6).unwrap();
    for q in 0..N_QUBITS {
        let c = g.spec.true_min.flipped(q);
        assert_eq!(g.spec.classify(&c), OutcomeClass::Other, "qubit {q}");
    }
}

#[test]
fn classes_cover_the_reference_states() {
    let g = build_gadget(1.0).unwrap();
    assert_eq!(g.spec.classify(&g.spec.start_state), OutcomeClass::Start);
    assert_eq!(g.spec.classify(&g.spec.true_min), OutcomeClass::TrueMin);
    for f in &g.spec.false_set {
        assert_eq!(g.spec.classify(f), OutcomeClass::FalseMin);
        assert!(hamming(f, &g.spec.true_min).unwrap() >= 6);
    }
}

#[test]
fn every_state_has_exactly_one_class() {
    let g = build_gadget(0.3).unwrap();
    let cls = g.spec.classifier();
    let mut counts = [0usize; 4];
    for x in 0..1usize << N_QUBITS {
        counts[cls.classify_index(x).index()] += 1;
    }
    assert_eq!(counts.iter().sum::<usize>(), 1 << N_QUBITS);
    assert_eq!(counts[0], 1);
    assert_eq!(counts[1], 1);
    assert_eq!(counts[2], g.spec.false_set.len());
}
