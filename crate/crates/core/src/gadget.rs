//! The engineered 16-qubit search-range gadget.
//!
//! Layout: inner-ring qubits `0..8` in ring order, each joined ferromagnetically
//! to its neighbours and to one pendant outer qubit `8 + i`. Outer qubits carry
//! `h = +1`; inner qubits carry `h = -1` (plain), `h = -1.95` (deep) or `h = 0`
//! (free). One extra edge of strength `-J_t` joins two outer qubits; it sets the
//! barrier between the start state and the true minimum.
//!
//! Which inner sites get which role, and which outer pair carries the tunable
//! edge, is found by a deterministic search (see [`GadgetTemplate::search`]).

use std::collections::HashSet;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ising::{hamming, Coupling, IsingProblem, SpinConfig};

pub const RING: usize = 8;
pub const N_QUBITS: usize = 2 * RING;
/// Energy gap between the false manifold and the true minimum.
pub const FALSE_OFFSET: f64 = 0.2;
const ENERGY_TOL: f64 = 1e-9;
const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    OuterRing,
    InnerPlain,
    InnerDeep,
    InnerFree,
}

impl Role {
    pub fn field(self) -> f64 {
        match self {
            Role::OuterRing => 1.0,
            Role::InnerPlain => -1.0,
            Role::InnerDeep => -1.95,
            Role::InnerFree => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeClass {
    Start,
    TrueMin,
    FalseMin,
    Other,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 4] = [
        OutcomeClass::Start,
        OutcomeClass::TrueMin,
        OutcomeClass::FalseMin,
        OutcomeClass::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Placement of roles on the inner ring plus the outer pair joined by the tunable edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GadgetTemplate {
    pub inner_roles: [Role; RING],
    /// Inner-ring sites whose pendants carry the tunable edge.
    pub barrier_sites: (usize, usize),
}

impl GadgetTemplate {
    /// First placement (lexicographic in inner roles, then in barrier sites)
    /// whose realized problem satisfies every landscape constraint at both ends
    /// of the `J_t` range, with the start state a strict local minimum for
    /// `J_t > 0` and a non-increasing inner-flip path at `J_t = 0`.
    ///
    /// All constraints are affine in `J_t`, so holding at 0 and 1 implies they
    /// hold on the whole interval; [`build_gadget`] re-validates regardless.
    pub fn search() -> Result<&'static GadgetTemplate> {
        static TEMPLATE: OnceLock<std::result::Result<GadgetTemplate, String>> = OnceLock::new();
        TEMPLATE
            .get_or_init(|| {
                let placements = inner_role_placements();
                placements
                    .par_iter()
                    .find_map_first(|roles| {
                        pairs().into_iter().find_map(|sites| {
                            let t = GadgetTemplate {
                                inner_roles: *roles,
                                barrier_sites: sites,
                            };
                            t.admissible().then_some(t)
                        })
                    })
                    .ok_or_else(|| "no role placement satisfies the landscape constraints".to_string())
            })
            .as_ref()
            .map_err(|e| Error::Gadget(e.clone()))
    }

    pub fn roles(&self) -> Vec<Role> {
        let mut r = self.inner_roles.to_vec();
        r.extend(std::iter::repeat_n(Role::OuterRing, RING));
        r
    }

    pub fn barrier_pair(&self) -> (usize, usize) {
        (RING + self.barrier_sites.0, RING + self.barrier_sites.1)
    }

    pub fn problem(&self, j_t: f64) -> IsingProblem {
        let mut couplings = Vec::with_capacity(2 * RING + 1);
        for i in 0..RING {
            let j = (i + 1) % RING;
            couplings.push(Coupling {
                i: i.min(j),
                j: i.max(j),
                strength: -1.0,
            });
        }
        for i in 0..RING {
            couplings.push(Coupling {
                i,
                j: RING + i,
                strength: -1.0,
            });
        }
        let (a, b) = self.barrier_pair();
        couplings.push(Coupling {
            i: a,
            j: b,
            strength: -j_t,
        });
        let fields = self.roles().iter().map(|r| r.field()).collect();
        IsingProblem::new(N_QUBITS, couplings, fields).expect("gadget template is well formed")
    }

    fn start_from(&self, true_min: &SpinConfig) -> SpinConfig {
        let (x, y) = self.barrier_sites;
        let mut s = true_min.clone();
        for q in [x, y, RING + x, RING + y] {
            s.flip(q);
        }
        s
    }

    fn admissible(&self) -> bool {
        let p0 = self.problem(0.0);
        let p1 = self.problem(1.0);
        // cheap local checks first, against the J_t = 0 ground state
        let Ok(e0) = p0.energies() else { return false };
        let Some(true0) = unique_argmin(&e0) else { return false };
        let true_cfg = SpinConfig::from_index(true0, N_QUBITS);
        let start = self.start_from(&true_cfg);
        let (a, b) = self.barrier_pair();
        for (p, j_t) in [(&p0, 0.0), (&p1, 1.0)] {
            for q in [a, b] {
                let d = p.flip_delta(&start, q);
                if (d - 2.0 * j_t).abs() > EXACT_TOL {
                    return false;
                }
            }
        }
        for q in 0..N_QUBITS {
            if p1.flip_delta(&start, q) <= EXACT_TOL || p0.flip_delta(&start, q) < -EXACT_TOL {
                return false;
            }
        }
        if !self.monotone_inner_path(&p0, &start) {
            return false;
        }
        let Ok(e1) = p1.energies() else { return false };
        if unique_argmin(&e1) != Some(true0) {
            return false;
        }
        [(&e0, 0.0), (&e1, 1.0)].iter().all(|(e, j_t)| {
            let spec = GadgetSpec::from_energies(self, *j_t, e, true_cfg.clone(), start.clone());
            spec.check_false_set().is_ok()
        })
    }

    fn monotone_inner_path(&self, p0: &IsingProblem, start: &SpinConfig) -> bool {
        let (x, y) = self.barrier_sites;
        let (a, b) = self.barrier_pair();
        let mut after_outer = start.clone();
        after_outer.flip(a);
        after_outer.flip(b);
        [(x, y), (y, x)].iter().any(|&(first, second)| {
            let mut c = after_outer.clone();
            let d1 = p0.flip_delta(&c, first);
            c.flip(first);
            let d2 = p0.flip_delta(&c, second);
            d1 <= EXACT_TOL && d2 <= EXACT_TOL
        })
    }
}

fn inner_role_placements() -> Vec<[Role; RING]> {
    let mut base = [
        Role::InnerPlain,
        Role::InnerPlain,
        Role::InnerPlain,
        Role::InnerPlain,
        Role::InnerDeep,
        Role::InnerDeep,
        Role::InnerFree,
        Role::InnerFree,
    ];
    let mut out = vec![base];
    while next_permutation(&mut base) {
        out.push(base);
    }
    out
}

fn next_permutation<T: Ord>(v: &mut [T]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).unwrap();
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn pairs() -> Vec<(usize, usize)> {
    (0..RING)
        .flat_map(|a| ((a + 1)..RING).map(move |b| (a, b)))
        .collect()
}

fn unique_argmin(e: &[f64]) -> Option<usize> {
    let (best, &emin) = e
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let ties = e.iter().filter(|&&x| x - emin <= ENERGY_TOL).count();
    (ties == 1).then_some(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GadgetSpec {
    pub j_t: f64,
    pub role_map: Vec<Role>,
    pub barrier_pair: (usize, usize),
    pub start_state: SpinConfig,
    pub true_min: SpinConfig,
    /// Sorted by basis index (lexicographic bit order).
    pub false_set: Vec<SpinConfig>,
}

impl GadgetSpec {
    fn from_energies(
        template: &GadgetTemplate,
        j_t: f64,
        energies: &[f64],
        true_min: SpinConfig,
        start_state: SpinConfig,
    ) -> GadgetSpec {
        let e_true = energies[true_min.index()];
        let false_set = energies
            .iter()
            .enumerate()
            .filter(|(_, &e)| (e - e_true - FALSE_OFFSET).abs() <= ENERGY_TOL)
            .map(|(i, _)| SpinConfig::from_index(i, N_QUBITS))
            .filter(|c| hamming(c, &true_min).unwrap() >= 6)
            .collect();
        GadgetSpec {
            j_t,
            role_map: template.roles(),
            barrier_pair: template.barrier_pair(),
            start_state,
            true_min,
            false_set,
        }
    }

    fn check_false_set(&self) -> Result<()> {
        if self.false_set.is_empty() {
            return Err(Error::Gadget("false manifold is empty".into()));
        }
        for f in &self.false_set {
            let inner = (0..RING)
                .filter(|&q| f.get(q) != self.start_state.get(q))
                .count();
            if inner != 6 {
                return Err(Error::Gadget(format!(
                    "false member {f} differs from the start state on {inner} inner spins, not 6"
                )));
            }
        }
        Ok(())
    }

    pub fn classifier(&self) -> Classifier {
        Classifier {
            start: self.start_state.index(),
            true_min: self.true_min.index(),
            false_set: self.false_set.iter().map(SpinConfig::index).collect(),
        }
    }

    pub fn classify(&self, config: &SpinConfig) -> OutcomeClass {
        if *config == self.start_state {
            OutcomeClass::Start
        } else if *config == self.true_min {
            OutcomeClass::TrueMin
        } else if self.false_set.binary_search_by_key(&config.index(), SpinConfig::index).is_ok() {
            OutcomeClass::FalseMin
        } else {
            OutcomeClass::Other
        }
    }

    /// Configuration reached from the start state by flipping one barrier qubit.
    pub fn barrier_states(&self) -> [SpinConfig; 2] {
        [
            self.start_state.flipped(self.barrier_pair.0),
            self.start_state.flipped(self.barrier_pair.1),
        ]
    }
}

/// Index-based classification for hot loops.
#[derive(Debug, Clone)]
pub struct Classifier {
    start: usize,
    true_min: usize,
    false_set: HashSet<usize>,
}

impl Classifier {
    pub fn classify_index(&self, index: usize) -> OutcomeClass {
        if index == self.start {
            OutcomeClass::Start
        } else if index == self.true_min {
            OutcomeClass::TrueMin
        } else if self.false_set.contains(&index) {
            OutcomeClass::FalseMin
        } else {
            OutcomeClass::Other
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gadget {
    pub spec: GadgetSpec,
    pub problem: IsingProblem,
}

/// Energy landscape summary produced by [`validate_gadget`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandscapeReport {
    pub j_t: f64,
    pub e_true: f64,
    pub e_start: f64,
    pub e_false: f64,
    pub false_minus_true: f64,
    pub barrier_energy: f64,
    pub barrier_minus_start: f64,
    pub false_degeneracy: usize,
    pub hamming_start_true: usize,
    pub hamming_start_false_min: usize,
    pub hamming_true_false_min: usize,
    pub inner_flips_start_to_false: usize,
    pub start_is_strict_local_min: bool,
}

pub fn build_gadget(j_t: f64) -> Result<Gadget> {
    if !(0.0..=1.0).contains(&j_t) {
        return Err(Error::out_of_range("J_t", j_t, "[0, 1]"));
    }
    let template = GadgetTemplate::search()?;
    let problem = template.problem(j_t);
    let energies = problem.energies()?;
    let true_idx = unique_argmin(&energies)
        .ok_or_else(|| Error::Gadget(format!("global minimum is degenerate at J_t = {j_t}")))?;
    let true_min = SpinConfig::from_index(true_idx, N_QUBITS);
    let start = template.start_from(&true_min);
    let spec = GadgetSpec::from_energies(template, j_t, &energies, true_min, start);
    let gadget = Gadget { spec, problem };
    validate_with(&gadget, &energies)?;
    Ok(gadget)
}

/// Checks every landscape invariant by exhaustive enumeration.
pub fn validate_gadget(gadget: &Gadget) -> Result<LandscapeReport> {
    let energies = gadget.problem.energies()?;
    validate_with(gadget, &energies)
}

fn validate_with(gadget: &Gadget, energies: &[f64]) -> Result<LandscapeReport> {
    let spec = &gadget.spec;
    let p = &gadget.problem;
    let fail = |m: String| Err(Error::Gadget(m));

    let mut roles = spec.role_map.clone();
    roles.sort();
    let expected: Vec<Role> = [
        (Role::OuterRing, 8),
        (Role::InnerPlain, 4),
        (Role::InnerDeep, 2),
        (Role::InnerFree, 2),
    ]
    .iter()
    .flat_map(|&(r, k)| std::iter::repeat_n(r, k))
    .collect();
    if roles != expected {
        return fail("role multiset is not {Outer x8, Plain x4, Deep x2, Free x2}".into());
    }

    if unique_argmin(energies) != Some(spec.true_min.index()) {
        return fail("true minimum is not the unique global minimum".into());
    }
    let e_true = p.energy(&spec.true_min)?;
    let e_start = p.energy(&spec.start_state)?;

    let h_st = hamming(&spec.start_state, &spec.true_min)?;
    let outer_flips = (RING..N_QUBITS)
        .filter(|&q| spec.start_state.get(q) != spec.true_min.get(q))
        .count();
    if h_st != 4 || outer_flips != 2 {
        return fail(format!(
            "start differs from true minimum by {h_st} flips ({outer_flips} outer); expected 4 (2 outer)"
        ));
    }

    spec.check_false_set()?;
    let mut e_false = f64::NAN;
    for f in &spec.false_set {
        let e = p.energy(f)?;
        if (e - e_true - FALSE_OFFSET).abs() > EXACT_TOL {
            return fail(format!("false member {f} sits {} above the true minimum", e - e_true));
        }
        e_false = e;
    }

    let mut barrier_energy = f64::NAN;
    for b in spec.barrier_states() {
        let e = p.energy(&b)?;
        if (e - e_start - 2.0 * spec.j_t).abs() > EXACT_TOL {
            return fail(format!(
                "barrier state {b} is {} above start, expected 2 J_t = {}",
                e - e_start,
                2.0 * spec.j_t
            ));
        }
        barrier_energy = e;
    }

    let strict = (0..N_QUBITS).all(|q| p.flip_delta(&spec.start_state, q) > EXACT_TOL);
    let min_hamming = |target: &SpinConfig| {
        spec.false_set
            .iter()
            .map(|f| hamming(target, f).unwrap())
            .min()
            .unwrap_or(0)
    };

    Ok(LandscapeReport {
        j_t: spec.j_t,
        e_true,
        e_start,
        e_false,
        false_minus_true: e_false - e_true,
        barrier_energy,
        barrier_minus_start: barrier_energy - e_start,
        false_degeneracy: spec.false_set.len(),
        hamming_start_true: h_st,
        hamming_start_false_min: min_hamming(&spec.start_state),
        hamming_true_false_min: min_hamming(&spec.true_min),
        inner_flips_start_to_false: 6,
        start_is_strict_local_min: strict,
    })
}

/// Flips taking the start state to the true minimum: barrier outers first, then inner sites,
/// ordered so that no inner flip raises the energy when `J_t = 0`.
pub fn descent_path(gadget: &Gadget) -> Result<Vec<usize>> {
    let t = GadgetTemplate::search()?;
    let (a, b) = t.barrier_pair();
    let (x, y) = t.barrier_sites;
    let p0 = t.problem(0.0);
    let mut c = gadget.spec.start_state.clone();
    c.flip(a);
    c.flip(b);
    let first_ok = p0.flip_delta(&c, x) <= EXACT_TOL && {
        let mut d = c.clone();
        d.flip(x);
        p0.flip_delta(&d, y) <= EXACT_TOL
    };
    Ok(if first_ok { vec![a, b, x, y] } else { vec![a, b, y, x] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_cover_the_multiset() {
        let p = inner_role_placements();
        assert_eq!(p.len(), 420);
        let mut sorted = p.clone();
        sorted.sort();
        assert_eq!(sorted, p);
        sorted.dedup();
        assert_eq!(sorted.len(), 420);
    }

    #[test]
    fn template_search_is_deterministic() {
        let t = GadgetTemplate::search().unwrap();
        assert_eq!(
            t.inner_roles.iter().filter(|&&r| r == Role::InnerDeep).count(),
            2
        );
        let (x, y) = t.barrier_sites;
        assert!(x < y);
    }

    #[test]
    fn out_of_range_coupling() {
        assert!(matches!(build_gadget(1.1), Err(Error::OutOfRange { .. })));
        assert!(build_gadget(-0.1).is_err());
    }

    #[test]
    fn structure_at_full_barrier() {
        let g = build_gadget(1.0).unwrap();
        assert_eq!(g.problem.n_qubits(), 16);
        assert_eq!(g.problem.couplings().len(), 17);
        let mut fields: Vec<f64> = g.problem.fields().to_vec();
        fields.sort_by(f64::total_cmp);
        let expect = [
            -1.95, -1.95, -1.0, -1.0, -1.0, -1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0,
            1.0,
        ];
        assert_eq!(fields, expect);
        let unit = g
            .problem
            .couplings()
            .iter()
            .filter(|c| c.strength == -1.0)
            .count();
        // 8 ring + 8 pendant edges, and the tunable edge at J_t = 1
        assert_eq!(unit, 17);
    }

    #[test]
    fn classify_named_states() {
        let g = build_gadget(0.5).unwrap();
        let s = &g.spec;
        assert_eq!(s.classify(&s.start_state), OutcomeClass::Start);
        assert_eq!(s.classify(&s.true_min), OutcomeClass::TrueMin);
        assert_eq!(s.classify(&s.false_set[0]), OutcomeClass::FalseMin);
        let cls = s.classifier();
        for f in &s.false_set {
            assert_eq!(cls.classify_index(f.index()), OutcomeClass::FalseMin);
        }
    }

    #[test]
    fn zero_barrier_descent_has_no_uphill_inner_step() {
        let g = build_gadget(0.0).unwrap();
        let path = descent_path(&g).unwrap();
        let mut c = g.spec.start_state.clone();
        let mut e = g.problem.energy(&c).unwrap();
        let e_start = e;
        for (k, &q) in path.iter().enumerate() {
            c.flip(q);
            let next = g.problem.energy(&c).unwrap();
            assert!(next <= e_start + 1e-12, "step {k} rises above the start energy");
            if k >= 2 {
                assert!(next <= e + 1e-12);
            }
            e = next;
        }
        assert_eq!(c, g.spec.true_min);
    }
}
