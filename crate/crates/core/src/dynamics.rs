//! Dissipative reverse-anneal dynamics.
//!
//! Populations evolve under a Pauli master equation `dp/dt = Q p` whose rates
//! come from an Ohmic bath with exponential cutoff. Two pictures are offered:
//!
//! * [`BasisMode::EnergyEigenbasis`]: populations live on the `m` lowest
//!   instantaneous eigenstates of `H(s)`, tracked between grid points by
//!   overlap; weight that leaves the tracked set is booked as leaked.
//! * [`BasisMode::ComputationalBasis`]: populations live on classical states
//!   within an energy window of the ground state; each single flip `x -> y`
//!   is driven by the bath at the classical splitting, weighted by how much
//!   the transverse field mixes `x` and `y`.
//!
//! Energies are in GHz (ordinary frequency) and times in µs throughout; the
//! `2π` enters only in [`BathModel::spectral`].

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gadget::{GadgetSpec, OutcomeClass};
use crate::ising::{IsingProblem, SpinConfig};
use crate::schedule::{ScheduleTable, Segment, Waveform};
use crate::spectrum::{assemble, lowest_eigenpairs, EigenSystem, SolverOptions};

pub const DEFAULT_TEMPERATURE_GHZ: f64 = 0.26;
pub const DEFAULT_CUTOFF_GHZ: f64 = 100.0;
pub const DEFAULT_LINEWIDTH_GHZ: f64 = 4.0;
pub const DEFAULT_ETA: f64 = 0.05;
pub const DEFAULT_ETA_RATIO: f64 = 5.0;
pub const LEAK_WARNING: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisMode {
    EnergyEigenbasis,
    ComputationalBasis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathModel {
    pub eta: f64,
    pub temperature: f64,
    pub cutoff: f64,
    /// Static level broadening (GHz) added in quadrature to the bath's own.
    #[serde(default)]
    pub linewidth: f64,
    pub basis_mode: BasisMode,
}

impl BathModel {
    /// `eta = 0` is accepted and switches dissipation off.
    pub fn new(eta: f64, temperature: f64, cutoff: f64, basis_mode: BasisMode) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::out_of_range("eta", eta, "[0, inf)"));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::out_of_range("temperature", temperature, "(0, inf)"));
        }
        if !(cutoff > temperature && cutoff.is_finite()) {
            return Err(Error::out_of_range("cutoff", cutoff, format!("({temperature}, inf)")));
        }
        Ok(BathModel {
            eta,
            temperature,
            cutoff,
            linewidth: DEFAULT_LINEWIDTH_GHZ,
            basis_mode,
        })
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_linewidth(mut self, linewidth: f64) -> Result<Self> {
        if !(linewidth >= 0.0 && linewidth.is_finite()) {
            return Err(Error::out_of_range("linewidth", linewidth, "[0, inf)"));
        }
        self.linewidth = linewidth;
        Ok(self)
    }

    /// Rate (1/µs) for a unit matrix element when the system releases `eps` GHz
    /// to the bath (negative `eps` means absorbing from it):
    /// `η (2π)² ε e^{-|ε|/ωc} / (1 - e^{-ε/T})`.
    pub fn spectral(&self, eps: f64) -> f64 {
        let t = self.temperature;
        let x = eps / t;
        let thermal = if x.abs() < 1e-8 {
            t * (1.0 + 0.5 * x)
        } else {
            eps / -(-x).exp_m1()
        };
        1e3 * self.eta * 4.0 * PI * PI * thermal * (-eps.abs() / self.cutoff).exp()
    }

    /// Total level broadening (GHz): the static linewidth combined with the
    /// zero-frequency dephasing of the bath.
    pub fn broadening(&self) -> f64 {
        self.linewidth.hypot(2.0 * PI * self.eta * self.temperature)
    }
}

impl Default for BathModel {
    fn default() -> Self {
        BathModel {
            eta: DEFAULT_ETA,
            temperature: DEFAULT_TEMPERATURE_GHZ,
            cutoff: DEFAULT_CUTOFF_GHZ,
            linewidth: DEFAULT_LINEWIDTH_GHZ,
            basis_mode: BasisMode::ComputationalBasis,
        }
    }
}

/// `rates[(i, j)]` is the rate (1/µs) for `i -> j`, with
/// `γ = η S(ω_ij) Σ_k |<i|σz_k|j>|²` and `ω_ij = B (λ_i - λ_j)`.
pub fn transition_rates(sys: &EigenSystem, bath: &BathModel, b_scale: f64) -> DMatrix<f64> {
    let m = sys.len();
    let dim = sys.vectors[0].len();
    let n = dim.trailing_zeros() as usize;
    let mut elements = DMatrix::<f64>::zeros(m, m);
    let mut prod = vec![0.0; m * m];
    for k in 0..n {
        prod.iter_mut().for_each(|v| *v = 0.0);
        let bit = 1usize << (n - 1 - k);
        for x in 0..dim {
            let z = if x & bit == 0 { 1.0 } else { -1.0 };
            for i in 0..m {
                let vi = sys.vectors[i][x] * z;
                if vi == 0.0 {
                    continue;
                }
                for j in i + 1..m {
                    prod[i * m + j] += vi * sys.vectors[j][x];
                }
            }
        }
        for i in 0..m {
            for j in i + 1..m {
                let e = prod[i * m + j] * prod[i * m + j];
                elements[(i, j)] += e;
                elements[(j, i)] += e;
            }
        }
    }
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            0.0
        } else {
            let w = b_scale * (sys.values[i] - sys.values[j]);
            bath.spectral(w) * elements[(i, j)]
        }
    })
}

/// Linear generator `Q` of `dp/dt = Q p` with zero column sums.
trait Generator {
    fn apply(&self, p: &[f64], out: &mut [f64]);
    /// Upper bound on the spectral radius.
    fn radius(&self) -> f64;
}

struct DenseGenerator {
    rates: DMatrix<f64>,
    out: Vec<f64>,
}

impl DenseGenerator {
    fn new(rates: DMatrix<f64>) -> Self {
        let out = (0..rates.nrows()).map(|i| rates.row(i).sum()).collect();
        DenseGenerator { rates, out }
    }
}

impl Generator for DenseGenerator {
    fn apply(&self, p: &[f64], out: &mut [f64]) {
        let m = p.len();
        for i in 0..m {
            let mut acc = -self.out[i] * p[i];
            for j in 0..m {
                acc += self.rates[(j, i)] * p[j];
            }
            out[i] = acc;
        }
    }

    fn radius(&self) -> f64 {
        2.0 * self.out.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rtol: 1e-6,
            atol: 1e-10,
            max_steps: 1_000_000,
        }
    }
}

/// Damped second-order Runge-Kutta-Chebyshev step with `s` stages.
fn rkc_step(g: &dyn Generator, y0: &[f64], f0: &[f64], h: f64, s: usize, out: &mut [f64], work: &mut [Vec<f64>; 3]) {
    let n = y0.len();
    let eps = 2.0 / 13.0;
    let w0 = 1.0 + eps / (s * s) as f64;
    // Chebyshev T_j, T'_j, T''_j at w0.
    let mut t = vec![0.0; s + 1];
    let mut dt = vec![0.0; s + 1];
    let mut ddt = vec![0.0; s + 1];
    t[0] = 1.0;
    t[1] = w0;
    dt[1] = 1.0;
    for j in 2..=s {
        t[j] = 2.0 * w0 * t[j - 1] - t[j - 2];
        dt[j] = 2.0 * t[j - 1] + 2.0 * w0 * dt[j - 1] - dt[j - 2];
        ddt[j] = 4.0 * dt[j - 1] + 2.0 * w0 * ddt[j - 1] - ddt[j - 2];
    }
    let w1 = dt[s] / ddt[s];
    let mut b = vec![0.0; s + 1];
    for j in 2..=s {
        b[j] = ddt[j] / (dt[j] * dt[j]);
    }
    b[0] = b[2];
    b[1] = b[2];

    let [yjm2, yjm1, fj] = work;
    yjm2.copy_from_slice(y0);
    let mu1 = b[1] * w1;
    for i in 0..n {
        yjm1[i] = y0[i] + mu1 * h * f0[i];
    }
    if s == 1 {
        out.copy_from_slice(yjm1);
        return;
    }
    for j in 2..=s {
        g.apply(yjm1, fj);
        let mu = 2.0 * b[j] * w0 / b[j - 1];
        let nu = -b[j] / b[j - 2];
        let mut_ = 2.0 * b[j] * w1 / b[j - 1];
        let gam = -(1.0 - b[j - 1] * t[j - 1]) * mut_;
        for i in 0..n {
            out[i] = (1.0 - mu - nu) * y0[i] + mu * yjm1[i] + nu * yjm2[i] + mut_ * h * fj[i] + gam * h * f0[i];
        }
        std::mem::swap(yjm2, yjm1);
        yjm1.copy_from_slice(out);
    }
}

/// Integrates `dp/dt = Q p` over `duration` with adaptive step and stage count.
fn integrate(g: &dyn Generator, p: &mut [f64], duration: f64, opts: &IntegratorOptions) -> Result<()> {
    if duration <= 0.0 {
        return Ok(());
    }
    let n = p.len();
    let rho = g.radius();
    if rho == 0.0 {
        return Ok(());
    }
    let mut f0 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut work = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    g.apply(p, &mut f0);
    let mut t = 0.0;
    let mut h = (duration).min(1.0 / rho);
    let mut steps = 0;
    while t < duration {
        if steps >= opts.max_steps {
            return Err(Error::Dynamics(format!("integrator exceeded {} steps", opts.max_steps)));
        }
        steps += 1;
        let last = t + h >= duration;
        if last {
            h = duration - t;
        }
        let s = (1.0 + (1.0 + 1.54 * h * rho).sqrt()).floor().max(2.0) as usize;
        rkc_step(g, p, &f0, h, s, &mut y1, &mut work);
        g.apply(&y1, &mut f1);
        let mut err: f64 = 0.0;
        for i in 0..n {
            let est = (12.0 * (p[i] - y1[i]) + 6.0 * h * (f0[i] + f1[i])) / 15.0;
            let scale = opts.atol + opts.rtol * p[i].abs().max(y1[i].abs());
            err = err.max((est / scale).abs());
        }
        if err <= 1.0 || h < 1e-14 * duration {
            t = if last { duration } else { t + h };
            p.copy_from_slice(&y1);
            std::mem::swap(&mut f0, &mut f1);
            let fac = if err > 0.0 { 0.8 * err.powf(-1.0 / 3.0) } else { 10.0 };
            h *= fac.clamp(0.1, 10.0);
        } else {
            h *= (0.8 * err.powf(-1.0 / 3.0)).clamp(0.1, 0.9);
        }
    }
    for v in p.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-9 {
                return Err(Error::Dynamics(format!("population fell to {v:e}")));
            }
            *v = v.max(-1e-12);
        }
    }
    Ok(())
}

/// Transition kinds in the computational picture. Energies are dimensionless.
#[derive(Debug, Clone, Copy)]
enum Move {
    /// Single flip releasing `release`.
    Single { release: f64 },
    /// Flip of a coupled pair through its two single-flip intermediates, whose
    /// energies sit `detuning` below the mean of the end points.
    Pair { release: f64, detuning: [f64; 2] },
}

fn class_key(m: &Move) -> (i64, i64, i64) {
    let q = |v: f64| (v * 1e8).round() as i64;
    match *m {
        Move::Single { release } => (q(release), i64::MIN, i64::MIN),
        Move::Pair { release, detuning } => (q(release), q(detuning[0]), q(detuning[1])),
    }
}

/// Classical flip network inside an energy window.
struct FlipNetwork {
    states: Vec<usize>,
    /// Per state: (neighbour position, class of the inward rate, class of the outward rate).
    adjacency: Vec<Vec<(u32, u32, u32)>>,
    classes: Vec<Move>,
}

impl FlipNetwork {
    fn build(problem: &IsingProblem, window: f64, must_include: usize, cotunneling: bool) -> Result<Self> {
        let all = problem.energies()?;
        let e0 = all.iter().cloned().fold(f64::INFINITY, f64::min);
        let n = problem.n_qubits();
        let mut pos = vec![u32::MAX; all.len()];
        let mut states = Vec::new();
        for (i, &e) in all.iter().enumerate() {
            if e - e0 <= window + 1e-9 || i == must_include {
                pos[i] = states.len() as u32;
                states.push(i);
            }
        }
        let bit = |q: usize| 1usize << (n - 1 - q);
        let pairs: Vec<(usize, usize)> = if cotunneling {
            problem.couplings().iter().map(|e| (bit(e.i), bit(e.j))).collect()
        } else {
            Vec::new()
        };
        let mut class_of: HashMap<(i64, i64, i64), u32> = HashMap::new();
        let mut classes = Vec::new();
        let mut class = |m: Move| -> u32 {
            *class_of.entry(class_key(&m)).or_insert_with(|| {
                classes.push(m);
                (classes.len() - 1) as u32
            })
        };
        let mut adjacency = Vec::with_capacity(states.len());
        for &x in &states {
            let mut nb = Vec::new();
            for b in 0..n {
                let y = x ^ (1 << b);
                if pos[y] != u32::MAX {
                    let inward = class(Move::Single { release: all[y] - all[x] });
                    let outward = class(Move::Single { release: all[x] - all[y] });
                    nb.push((pos[y], inward, outward));
                }
            }
            for &(ba, bb) in &pairs {
                let y = x ^ ba ^ bb;
                if pos[y] != u32::MAX {
                    let mean = 0.5 * (all[x] + all[y]);
                    let mut detuning = [mean - all[x ^ ba], mean - all[x ^ bb]];
                    detuning.sort_by(|p, q| p.partial_cmp(q).expect("energies are finite"));
                    let inward = class(Move::Pair {
                        release: all[y] - all[x],
                        detuning,
                    });
                    let outward = class(Move::Pair {
                        release: all[x] - all[y],
                        detuning,
                    });
                    nb.push((pos[y], inward, outward));
                }
            }
            adjacency.push(nb);
        }
        Ok(FlipNetwork {
            states,
            adjacency,
            classes,
        })
    }

    fn generator(&self, a: f64, b: f64, bath: &BathModel) -> SparseGenerator<'_> {
        let w2 = bath.broadening().powi(2);
        let rates: Vec<f64> = self
            .classes
            .iter()
            .map(|m| {
                let (release, coupling) = match *m {
                    Move::Single { release } => (release, a),
                    Move::Pair { release, detuning } => {
                        let t: f64 = detuning
                            .iter()
                            .map(|&d| {
                                let d = b * d;
                                a * a * d / (d * d + 4.0 * a * a)
                            })
                            .sum();
                        (release, t)
                    }
                };
                let eps = b * release;
                let mix = 4.0 * coupling * coupling / (eps * eps + 4.0 * coupling * coupling + w2);
                if mix == 0.0 {
                    0.0
                } else {
                    bath.spectral(eps) * mix
                }
            })
            .collect();
        let out = self
            .adjacency
            .iter()
            .map(|nb| nb.iter().map(|&(_, _, o)| rates[o as usize]).sum())
            .collect();
        SparseGenerator {
            net: self,
            rates,
            out,
        }
    }
}

struct SparseGenerator<'a> {
    net: &'a FlipNetwork,
    rates: Vec<f64>,
    out: Vec<f64>,
}

impl Generator for SparseGenerator<'_> {
    fn apply(&self, p: &[f64], out: &mut [f64]) {
        for (i, nb) in self.net.adjacency.iter().enumerate() {
            let mut acc = -self.out[i] * p[i];
            for &(j, inward, _) in nb {
                acc += self.rates[inward as usize] * p[j as usize];
            }
            out[i] = acc;
        }
    }

    fn radius(&self) -> f64 {
        2.0 * self.out.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    /// Tracked eigenstates in the eigenbasis picture.
    pub levels: usize,
    /// Intervals per ramp segment; a hold is one interval of constant rates.
    pub grid_steps: usize,
    /// Classical states kept in the computational picture, as an energy
    /// window (dimensionless) above the ground state.
    pub window: f64,
    pub max_refine: usize,
    /// Adds second-order flips of coupled pairs to the computational picture.
    pub cotunneling: bool,
    pub integrator: IntegratorOptions,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            levels: 16,
            grid_steps: 200,
            window: 8.2,
            max_refine: 6,
            cotunneling: true,
            integrator: IntegratorOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub s: f64,
    pub n_qubits: usize,
    /// Basis state that each tracked level maps to at the final point.
    pub labels: Vec<usize>,
    /// Weight of that basis state in the level (1 in the computational picture).
    pub dominance: Vec<f64>,
    pub populations: Vec<f64>,
    pub leaked: f64,
    pub warnings: Vec<String>,
}

impl PopulationState {
    pub fn total(&self) -> f64 {
        self.populations.iter().sum::<f64>() + self.leaked
    }

    /// Probability of each outcome class, leaked weight counted as `Other`.
    pub fn class_weights(&self, spec: &GadgetSpec) -> [f64; 4] {
        let cls = spec.classifier();
        let mut w = [0.0; 4];
        for (&l, &p) in self.labels.iter().zip(&self.populations) {
            w[cls.classify_index(l).index()] += p.max(0.0);
        }
        w[OutcomeClass::Other.index()] += self.leaked;
        w
    }

    pub fn population_of(&self, index: usize) -> f64 {
        self.labels
            .iter()
            .zip(&self.populations)
            .filter(|(&l, _)| l == index)
            .map(|(_, &p)| p)
            .sum()
    }
}

/// Integration grid: each ramp split into `steps` intervals, each hold kept whole.
pub fn integration_grid(waveform: &Waveform, steps: usize) -> Vec<(f64, f64)> {
    let mut grid = vec![(waveform.segments[0].t_start, waveform.segments[0].s_start)];
    for seg in &waveform.segments {
        let k = if seg.s_start == seg.s_end { 1 } else { steps.max(1) };
        for j in 1..=k {
            let t = if j == k {
                seg.t_end
            } else {
                seg.t_start + (seg.t_end - seg.t_start) * j as f64 / k as f64
            };
            grid.push((t, segment_s(seg, t)));
        }
    }
    grid
}

fn segment_s(seg: &Segment, t: f64) -> f64 {
    if t == seg.t_end {
        seg.s_end
    } else {
        seg.s_start + (seg.s_end - seg.s_start) * (t - seg.t_start) / (seg.t_end - seg.t_start)
    }
}

/// Runs the protocol from the basis state `start` along `waveform`.
pub fn evolve(
    problem: &IsingProblem,
    waveform: &Waveform,
    schedule: &ScheduleTable,
    bath: &BathModel,
    opts: &EvolveOptions,
    start: &SpinConfig,
) -> Result<PopulationState> {
    let grid = integration_grid(waveform, opts.grid_steps);
    evolve_on_grid(problem, &grid, schedule, bath, opts, start)
}

/// As [`evolve`] on an explicit `(t, s)` grid; the first point sets the initial level.
pub fn evolve_on_grid(
    problem: &IsingProblem,
    grid: &[(f64, f64)],
    schedule: &ScheduleTable,
    bath: &BathModel,
    opts: &EvolveOptions,
    start: &SpinConfig,
) -> Result<PopulationState> {
    if start.len() != problem.n_qubits() {
        return Err(Error::LengthMismatch {
            expected: problem.n_qubits(),
            actual: start.len(),
        });
    }
    if grid.len() < 2 {
        return Err(Error::Dynamics("grid needs at least two points".into()));
    }
    if grid.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Dynamics("grid times must be non-decreasing".into()));
    }
    match bath.basis_mode {
        BasisMode::ComputationalBasis => evolve_classical(problem, grid, schedule, bath, opts, start),
        BasisMode::EnergyEigenbasis => evolve_eigen(problem, grid, schedule, bath, opts, start),
    }
}

fn evolve_classical(
    problem: &IsingProblem,
    grid: &[(f64, f64)],
    schedule: &ScheduleTable,
    bath: &BathModel,
    opts: &EvolveOptions,
    start: &SpinConfig,
) -> Result<PopulationState> {
    let net = FlipNetwork::build(problem, opts.window, start.index(), opts.cotunneling)?;
    let mut p = vec![0.0; net.states.len()];
    let start_pos = net.states.binary_search(&start.index()).expect("start is always kept");
    p[start_pos] = 1.0;
    let mut cached: Option<(f64, SparseGenerator)> = None;
    for w in grid.windows(2) {
        let ((t0, s0), (t1, s1)) = (w[0], w[1]);
        let dt = t1 - t0;
        if dt <= 0.0 || bath.eta == 0.0 {
            continue;
        }
        let s_mid = 0.5 * (s0 + s1);
        if cached.as_ref().is_none_or(|(s, _)| *s != s_mid) {
            let (a, b) = schedule.ab(s_mid)?;
            cached = Some((s_mid, net.generator(a, b, bath)));
        }
        let g = &cached.as_ref().expect("set above").1;
        integrate(g, &mut p, dt, &opts.integrator)?;
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Dynamics(format!("probability drifted to {total}")));
        }
    }
    Ok(PopulationState {
        s: grid[grid.len() - 1].1,
        n_qubits: problem.n_qubits(),
        labels: net.states.clone(),
        dominance: vec![1.0; net.states.len()],
        populations: p,
        leaked: 0.0,
        warnings: Vec::new(),
    })
}

fn eigensystem_at(
    problem: &IsingProblem,
    schedule: &ScheduleTable,
    s: f64,
    m: usize,
    warm: Option<&EigenSystem>,
) -> Result<(EigenSystem, f64)> {
    let (a, b) = schedule.ab(s)?;
    let gamma = a / b;
    let h = assemble(problem, gamma)?;
    let m = m.min(h.dim());
    let sys = if gamma == 0.0 {
        // Diagonal: basis states, ties in index order.
        let d = h.diagonal();
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by(|&x, &y| d[x].partial_cmp(&d[y]).expect("finite"));
        let vectors = order[..m]
            .iter()
            .map(|&i| {
                let mut v = vec![0.0; d.len()];
                v[i] = 1.0;
                v
            })
            .collect();
        EigenSystem {
            gamma,
            values: order[..m].iter().map(|&i| d[i]).collect(),
            vectors,
            residuals: vec![0.0; m],
            iterations: 0,
        }
    } else {
        let guesses = warm.map(|w| w.vectors.as_slice());
        lowest_eigenpairs(&h, m, guesses, &SolverOptions::default())?
    };
    Ok((sys, b))
}

fn overlaps(a: &EigenSystem, b: &EigenSystem) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        a.vectors[i].iter().zip(&b.vectors[j]).map(|(x, y)| x * y).sum()
    })
}

fn evolve_eigen(
    problem: &IsingProblem,
    grid: &[(f64, f64)],
    schedule: &ScheduleTable,
    bath: &BathModel,
    opts: &EvolveOptions,
    start: &SpinConfig,
) -> Result<PopulationState> {
    if opts.levels < 2 {
        return Err(Error::out_of_range("levels", opts.levels as f64, "[2, 2^n]"));
    }
    let (mut sys, mut b) = eigensystem_at(problem, schedule, grid[0].1, opts.levels, None)?;
    let si = start.index();
    let (best, weight) = (0..sys.len())
        .map(|i| (i, sys.vectors[i][si].powi(2)))
        .fold((0, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
    if weight < 0.5 {
        return Err(Error::Dynamics(format!(
            "start state has weight {weight:.3} on the {} tracked levels; raise the level count or use the computational basis",
            sys.len()
        )));
    }
    let mut p = vec![0.0; sys.len()];
    p[best] = 1.0;
    let mut leaked = 0.0;
    let mut warnings = Vec::new();
    let mut cached_rates: Option<(f64, DenseGenerator)> = None;

    let mut stack: Vec<((f64, f64), (f64, f64), usize)> = grid
        .windows(2)
        .rev()
        .map(|w| (w[0], w[1], 0))
        .collect();
    while let Some(((t0, s0), (t1, s1), depth)) = stack.pop() {
        if bath.eta > 0.0 && t1 > t0 {
            if cached_rates.as_ref().is_none_or(|(s, _)| *s != s0) {
                cached_rates = Some((s0, DenseGenerator::new(transition_rates(&sys, bath, b))));
            }
            integrate(&cached_rates.as_ref().expect("set above").1, &mut p, t1 - t0, &opts.integrator)?;
        }
        if s1 == s0 {
            continue;
        }
        let (next, b_next) = eigensystem_at(problem, schedule, s1, opts.levels, Some(&sys))?;
        let o = overlaps(&sys, &next);
        let poorly_tracked = (0..sys.len()).any(|i| {
            p[i] > 1e-12 && (0..next.len()).map(|j| o[(i, j)].abs()).fold(0.0, f64::max) < 0.5
        });
        if poorly_tracked && depth < opts.max_refine {
            // Populations are already at t1; only the basis change is refined.
            let sm = 0.5 * (s0 + s1);
            stack.push(((t1, sm), (t1, s1), depth + 1));
            stack.push(((t1, s0), (t1, sm), depth + 1));
            continue;
        }
        let mut q = vec![0.0; next.len()];
        for i in 0..sys.len() {
            let mut kept = 0.0;
            for j in 0..next.len() {
                let w = o[(i, j)] * o[(i, j)];
                q[j] += p[i] * w;
                kept += w;
            }
            leaked += p[i] * (1.0 - kept).max(0.0);
        }
        p = q;
        sys = next;
        b = b_next;
        cached_rates = None;
    }
    if leaked > LEAK_WARNING {
        warnings.push(format!(
            "leaked probability {leaked:.3} exceeds {LEAK_WARNING}; the tracked subspace is too small"
        ));
    }
    let (labels, dominance): (Vec<usize>, Vec<f64>) = (0..sys.len()).map(|i| sys.dominant_state(i)).unzip();
    let total: f64 = p.iter().sum::<f64>() + leaked;
    if (total - 1.0).abs() > 1e-9 {
        // Projection loses nothing by construction; renormalise round-off.
        leaked = 1.0 - p.iter().sum::<f64>();
    }
    Ok(PopulationState {
        s: grid[grid.len() - 1].1,
        n_qubits: problem.n_qubits(),
        labels,
        dominance,
        populations: p,
        leaked,
        warnings,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub device: String,
    pub j_t: f64,
    pub s_star: f64,
    pub gamma_star: f64,
    pub tau_us: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeHistogram {
    /// Bitstring (qubit 0 leftmost) to count.
    pub counts: BTreeMap<String, u64>,
    /// Shots drawn from leaked weight; they have no configuration.
    pub leaked: u64,
    pub shots: u64,
    pub meta: RunMeta,
}

impl OutcomeHistogram {
    pub fn class_counts(&self, spec: &GadgetSpec) -> Result<[u64; 4]> {
        let mut c = [0u64; 4];
        for (bits, &n) in &self.counts {
            let cfg = SpinConfig::from_bits(bits)?;
            c[spec.classify(&cfg).index()] += n;
        }
        c[OutcomeClass::Other.index()] += self.leaked;
        Ok(c)
    }

    /// Most frequent configurations, ties by bitstring.
    pub fn top(&self, k: usize) -> Vec<(String, u64)> {
        let mut v: Vec<(String, u64)> = self.counts.iter().map(|(b, &n)| (b.clone(), n)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.truncate(k);
        v
    }
}

/// Projective readout: each level is reported as its dominant basis state.
pub fn sample_outcomes(state: &PopulationState, shots: u64, seed: u64) -> Result<OutcomeHistogram> {
    if shots == 0 {
        return Err(Error::Dynamics("shots must be positive".into()));
    }
    if let Some(i) = (0..state.labels.len()).find(|&i| state.populations[i] > 1e-9 && state.dominance[i] < 0.99) {
        return Err(Error::Dynamics(format!(
            "level {i} is not basis-aligned at readout (dominant weight {:.4})",
            state.dominance[i]
        )));
    }
    let mut weights: Vec<f64> = state.populations.iter().map(|&p| p.max(0.0)).collect();
    weights.push(state.leaked.max(0.0));
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::Dynamics(format!("bad populations: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_level = vec![0u64; weights.len()];
    for _ in 0..shots {
        by_level[dist.sample(&mut rng)] += 1;
    }
    let mut counts = BTreeMap::new();
    for (i, &n) in by_level[..state.labels.len()].iter().enumerate() {
        if n > 0 {
            let bits = SpinConfig::from_index(state.labels[i], state.n_qubits).to_bits();
            *counts.entry(bits).or_insert(0) += n;
        }
    }
    Ok(OutcomeHistogram {
        counts,
        leaked: by_level[state.labels.len()],
        shots,
        meta: RunMeta {
            seed,
            ..RunMeta::default()
        },
    })
}

/// Planar-rotor Metropolis dynamics at the given `(A, B)` per sweep, starting from `start`.
pub fn svmc_run(
    problem: &IsingProblem,
    ab_per_sweep: &[(f64, f64)],
    temperature: f64,
    start: &SpinConfig,
    rng: &mut impl Rng,
) -> SpinConfig {
    let n = problem.n_qubits();
    let mut nbrs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for c in problem.couplings() {
        nbrs[c.i].push((c.j, c.strength));
        nbrs[c.j].push((c.i, c.strength));
    }
    let h = problem.fields();
    let mut theta: Vec<f64> = start.spins().iter().map(|&s| if s > 0 { 0.0 } else { PI }).collect();
    let mut cos: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
    for &(a, b) in ab_per_sweep {
        for i in 0..n {
            let new = rng.random::<f64>() * PI;
            let local = h[i] + nbrs[i].iter().map(|&(j, w)| w * cos[j]).sum::<f64>();
            let (c_new, c_old) = (new.cos(), cos[i]);
            let de = -a * (new.sin() - theta[i].sin()) + b * local * (c_new - c_old);
            if de <= 0.0 || rng.random::<f64>() < (-de / temperature).exp() {
                theta[i] = new;
                cos[i] = c_new;
            }
        }
    }
    let spins = cos.iter().map(|&c| if c >= 0.0 { 1 } else { -1 }).collect();
    SpinConfig::new(spins).expect("signs are ±1")
}

/// Spin-vector Monte Carlo along the waveform, one independent trajectory per shot.
#[allow(clippy::too_many_arguments)]
pub fn svmc_evolve(
    problem: &IsingProblem,
    waveform: &Waveform,
    schedule: &ScheduleTable,
    temperature: f64,
    sweeps: usize,
    shots: u64,
    start: &SpinConfig,
    seed: u64,
) -> Result<OutcomeHistogram> {
    if sweeps == 0 || shots == 0 {
        return Err(Error::Dynamics("sweeps and shots must be positive".into()));
    }
    let total = waveform.total_time();
    let ab = (0..sweeps)
        .map(|k| schedule.ab(waveform.s_at(total * (k as f64 + 0.5) / sweeps as f64)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = BTreeMap::new();
    for _ in 0..shots {
        let out = svmc_run(problem, &ab, temperature, start, &mut rng);
        *counts.entry(out.to_bits()).or_insert(0) += 1;
    }
    Ok(OutcomeHistogram {
        counts,
        leaked: 0,
        shots,
        meta: RunMeta {
            seed,
            ..RunMeta::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{reverse_waveform, Device, MAX_RATE};

    fn bath(mode: BasisMode) -> BathModel {
        BathModel::new(0.01, 0.26, 100.0, mode).unwrap()
    }

    #[test]
    fn detailed_balance() {
        let b = bath(BasisMode::ComputationalBasis);
        for eps in [0.01, 0.3, 1.0, 4.0] {
            let ratio = b.spectral(eps) / b.spectral(-eps);
            assert!((ratio / (eps / b.temperature).exp() - 1.0).abs() < 1e-9);
        }
        let s0 = b.spectral(0.0);
        assert!((s0 - 1e3 * 0.01 * 4.0 * PI * PI * 0.26).abs() < 1e-9 * s0);
    }

    #[test]
    fn bath_validation() {
        assert!(BathModel::new(-1.0, 0.26, 100.0, BasisMode::ComputationalBasis).is_err());
        assert!(BathModel::new(0.1, 0.0, 100.0, BasisMode::ComputationalBasis).is_err());
        assert!(BathModel::new(0.1, 1.0, 0.5, BasisMode::ComputationalBasis).is_err());
    }

    #[test]
    fn rates_scale_with_eta() {
        let p = IsingProblem::new(2, vec![crate::ising::Coupling { i: 0, j: 1, strength: -1.0 }], vec![0.3, -0.2]).unwrap();
        let h = assemble(&p, 0.5).unwrap();
        let sys = lowest_eigenpairs(&h, 4, None, &SolverOptions::default()).unwrap();
        let b = bath(BasisMode::EnergyEigenbasis);
        let r1 = transition_rates(&sys, &b, 2.0);
        let r2 = transition_rates(&sys, &b.with_eta(0.02), 2.0);
        for i in 0..4 {
            for j in 0..4 {
                assert!((r2[(i, j)] - 2.0 * r1[(i, j)]).abs() <= 1e-12 * r1[(i, j)].abs().max(1.0));
                if i != j && r1[(j, i)] > 0.0 {
                    let w = 2.0 * (sys.values[i] - sys.values[j]);
                    let ratio = r1[(i, j)] / r1[(j, i)];
                    assert!((ratio / (w / b.temperature).exp() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rkc_matches_two_state_solution() {
        let (k1, k2) = (3.0, 0.5);
        let g = DenseGenerator::new(DMatrix::from_row_slice(2, 2, &[0.0, k1, k2, 0.0]));
        let mut p = vec![1.0, 0.0];
        let tight = IntegratorOptions {
            rtol: 1e-10,
            atol: 1e-13,
            ..IntegratorOptions::default()
        };
        integrate(&g, &mut p, 0.7, &tight).unwrap();
        let eq = k1 / (k1 + k2);
        let p0 = (1.0 - eq) + eq * (-(k1 + k2) * 0.7f64).exp();
        assert!((p[0] - p0).abs() < 1e-7, "{p:?}");
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stiff_generator_reaches_equilibrium() {
        let (k1, k2) = (5e4, 2e4);
        let g = DenseGenerator::new(DMatrix::from_row_slice(2, 2, &[0.0, k1, k2, 0.0]));
        let mut p = vec![1.0, 0.0];
        integrate(&g, &mut p, 100.0, &IntegratorOptions::default()).unwrap();
        assert!((p[1] - k1 / (k1 + k2)).abs() < 1e-6);
    }

    #[test]
    fn zero_eta_freezes() {
        let g = crate::gadget::build_gadget(1.0).unwrap();
        let sched = ScheduleTable::synthetic(Device::LowNoise);
        let w = reverse_waveform(0.5, 1.0, MAX_RATE).unwrap();
        let b = bath(BasisMode::ComputationalBasis).with_eta(0.0);
        let st = evolve(&g.problem, &w, &sched, &b, &EvolveOptions::default(), &g.spec.start_state).unwrap();
        assert_eq!(st.population_of(g.spec.start_state.index()), 1.0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let st = PopulationState {
            s: 1.0,
            n_qubits: 2,
            labels: vec![0, 1, 2, 3],
            dominance: vec![1.0; 4],
            populations: vec![0.5, 0.3, 0.15, 0.05],
            leaked: 0.0,
            warnings: vec![],
        };
        let a = sample_outcomes(&st, 1000, 9).unwrap();
        let b = sample_outcomes(&st, 1000, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.counts.values().sum::<u64>() + a.leaked, 1000);
    }

    #[test]
    fn ambiguous_readout_rejected() {
        let st = PopulationState {
            s: 1.0,
            n_qubits: 1,
            labels: vec![0, 1],
            dominance: vec![0.6, 1.0],
            populations: vec![0.5, 0.5],
            leaked: 0.0,
            warnings: vec![],
        };
        assert!(sample_outcomes(&st, 10, 1).is_err());
    }

    #[test]
    fn svmc_free_spins_are_uniform_when_hot() {
        let p = IsingProblem::new(4, vec![], vec![0.0; 4]).unwrap();
        let ab = vec![(0.0, 0.0); 20];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let start = SpinConfig::all_up(4);
        let mut up = 0;
        let trials = 4000;
        for _ in 0..trials {
            up += svmc_run(&p, &ab, 1e6, &start, &mut rng).spins().iter().filter(|&&s| s > 0).count();
        }
        let frac = up as f64 / (4 * trials) as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn svmc_frozen_stays_put() {
        let g = crate::gadget::build_gadget(1.0).unwrap();
        let ab = vec![(0.0, 10.0); 50];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = svmc_run(&g.problem, &ab, 0.26, &g.spec.start_state, &mut rng);
        assert_eq!(out, g.spec.start_state);
    }
}
