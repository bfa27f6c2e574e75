//! Transverse-field Hamiltonian `H/B = -Γ Σ σx_i + H_prob`, its low-lying
//! eigenpairs, and the avoided crossing between true and false minima.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ising::{IsingProblem, SpinConfig, MAX_ENUMERATION_QUBITS};
use crate::schedule::ScheduleTable;

const CHUNK: usize = 8192;

/// Matrix-free representation: the diagonal holds classical energies and every
/// single-spin flip contributes an off-diagonal `-Γ`.
#[derive(Debug, Clone)]
pub struct SparseHamiltonian {
    n_qubits: usize,
    gamma: f64,
    diag: Vec<f64>,
}

pub fn assemble(problem: &IsingProblem, gamma: f64) -> Result<SparseHamiltonian> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::out_of_range("Γ", gamma, "[0, inf)"));
    }
    Ok(SparseHamiltonian {
        n_qubits: problem.n_qubits(),
        gamma,
        diag: problem.energies()?,
    })
}

impl SparseHamiltonian {
    /// Builds from precomputed diagonal energies (length must be a power of two).
    pub fn from_diagonal(diag: Vec<f64>, gamma: f64) -> Result<Self> {
        if !diag.len().is_power_of_two() {
            return Err(Error::InvalidProblem(format!(
                "diagonal length {} is not a power of two",
                diag.len()
            )));
        }
        let n_qubits = diag.len().trailing_zeros() as usize;
        if n_qubits > MAX_ENUMERATION_QUBITS {
            return Err(Error::TooLarge {
                n: n_qubits,
                max: MAX_ENUMERATION_QUBITS,
            });
        }
        Ok(SparseHamiltonian {
            n_qubits,
            gamma,
            diag,
        })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        SparseHamiltonian {
            n_qubits: self.n_qubits,
            gamma,
            diag: self.diag.clone(),
        }
    }

    /// Bound on the spectral radius, used to make tolerances relative.
    pub fn scale(&self) -> f64 {
        let d = self.diag.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        (d + self.n_qubits as f64 * self.gamma).max(1.0)
    }

    /// Nonzero entries `(column, value)` of one row; the diagonal is omitted when zero.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(self.n_qubits + 1);
        if self.diag[i] != 0.0 {
            out.push((i, self.diag[i]));
        }
        if self.gamma != 0.0 {
            for b in 0..self.n_qubits {
                out.push((i ^ (1 << b), -self.gamma));
            }
        }
        out
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if (i ^ j).count_ones() == 1 {
            -self.gamma
        } else {
            0.0
        }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.gamma;
        let n = self.n_qubits;
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(c, ys)| {
            let base = c * CHUNK;
            for (k, yi) in ys.iter_mut().enumerate() {
                let i = base + k;
                let mut off = 0.0;
                for b in 0..n {
                    off += x[i ^ (1 << b)];
                }
                *yi = self.diag[i] * x[i] - g * off;
            }
        });
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.n_qubits > 12 {
            return Err(Error::TooLarge {
                n: self.n_qubits,
                max: 12,
            });
        }
        let d = self.dim();
        Ok(DMatrix::from_fn(d, d, |i, j| self.entry(i, j)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_chunks_mut(CHUNK)
        .zip(x.par_chunks(CHUNK))
        .for_each(|(ys, xs)| ys.iter_mut().zip(xs).for_each(|(b, a)| *b += alpha * a));
}

fn scale_in_place(alpha: f64, x: &mut [f64]) {
    x.par_chunks_mut(CHUNK)
        .for_each(|xs| xs.iter_mut().for_each(|v| *v *= alpha));
}

/// Appends `v` to `basis` after two rounds of Gram-Schmidt; returns false if it
/// is numerically dependent.
fn push_orthonormal(basis: &mut Vec<Vec<f64>>, mut v: Vec<f64>) -> bool {
    let original = dot(&v, &v).sqrt();
    if !(original > 1e-300) {
        return false;
    }
    scale_in_place(1.0 / original, &mut v);
    for _ in 0..2 {
        for q in basis.iter() {
            let c = dot(q, &v);
            axpy(-c, q, &mut v);
        }
    }
    let norm = dot(&v, &v).sqrt();
    if norm < 1e-8 {
        return false;
    }
    scale_in_place(1.0 / norm, &mut v);
    basis.push(v);
    true
}

fn combine(basis: &[Vec<f64>], coeffs: &DMatrix<f64>, col: usize, rows: std::ops::Range<usize>) -> Vec<f64> {
    let dim = basis[0].len();
    let mut out = vec![0.0; dim];
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, os)| {
        let base = c * CHUNK;
        for r in rows.clone() {
            let w = coeffs[(r, col)];
            if w != 0.0 {
                let src = &basis[r][base..base + os.len()];
                os.iter_mut().zip(src).for_each(|(o, s)| *o += w * s);
            }
        }
    });
    out
}

/// Smallest eigenpairs of a real symmetric matrix, sorted ascending.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Residual tolerance relative to [`SparseHamiltonian::scale`].
    pub tol: f64,
    pub max_iter: usize,
    /// Block vectors beyond the requested count.
    pub extra: usize,
    /// Dimensions up to this size are diagonalized densely.
    pub dense_limit: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 2000,
            extra: 2,
            dense_limit: 256,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub gamma: f64,
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector for `values[i]`.
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn gap(&self) -> f64 {
        (self.values[1] - self.values[0]).max(0.0)
    }

    /// Basis index with the largest weight in eigenvector `i`, and that weight.
    pub fn dominant_state(&self, i: usize) -> (usize, f64) {
        self.vectors[i]
            .iter()
            .enumerate()
            .map(|(k, a)| (k, a * a))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
    }
}

/// The `k` lowest eigenpairs by locally optimal block preconditioned conjugate
/// gradients, warm-started from `guesses` when given.
pub fn lowest_eigenpairs(
    h: &SparseHamiltonian,
    k: usize,
    guesses: Option<&[Vec<f64>]>,
    opts: &SolverOptions,
) -> Result<EigenSystem> {
    let dim = h.dim();
    if k == 0 || k > dim {
        return Err(Error::out_of_range("k", k as f64, format!("[1, {dim}]")));
    }
    if dim <= opts.dense_limit || 3 * (k + opts.extra) >= dim {
        return dense_eigenpairs(h, k);
    }
    let scale = h.scale();
    let tol = opts.tol * scale;
    let n_guess = guesses.map_or(0, |g| g.len());
    let block = (k + opts.extra).max(n_guess).min(dim / 3);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = Vec::with_capacity(block);
    if let Some(gs) = guesses {
        for g in gs {
            if g.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    actual: g.len(),
                });
            }
            if x.len() < block {
                push_orthonormal(&mut x, g.clone());
            }
        }
    }
    // Fill with basis vectors at the lowest diagonal entries, lightly perturbed.
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| h.diag[a].total_cmp(&h.diag[b]));
    let mut cursor = 0;
    while x.len() < block {
        let mut v: Vec<f64> = (0..dim).map(|_| 1e-3 * (rng.random::<f64>() - 0.5)).collect();
        if cursor < dim {
            v[order[cursor]] += 1.0;
            cursor += 1;
        }
        push_orthonormal(&mut x, v);
    }

    let matvec = |v: &[f64]| {
        let mut y = vec![0.0; dim];
        h.apply(v, &mut y);
        y
    };

    let mut hx: Vec<Vec<f64>> = x.iter().map(|v| matvec(v)).collect();
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut lambda = vec![0.0; block];
    let mut residuals = vec![f64::INFINITY; block];

    for iter in 0..=opts.max_iter {
        // Rayleigh-Ritz on [X, W, P].
        let (mut basis, mut hbasis) = if iter == 0 {
            (x.clone(), hx.clone())
        } else {
            let mut basis = x.clone();
            let mut hbasis = hx.clone();
            let mut fresh = Vec::new();
            for (i, xi) in x.iter().enumerate() {
                if residuals[i] <= tol && i < k {
                    continue;
                }
                let mut r = hx[i].clone();
                axpy(-lambda[i], xi, &mut r);
                let shift = lambda[i];
                let floor = 1e-3 * scale;
                r.par_chunks_mut(CHUNK).enumerate().for_each(|(c, rs)| {
                    let base = c * CHUNK;
                    for (j, v) in rs.iter_mut().enumerate() {
                        *v /= (h.diag[base + j] - shift).abs().max(floor);
                    }
                });
                fresh.push(r);
            }
            fresh.extend(p.drain(..));
            for v in fresh {
                if push_orthonormal(&mut basis, v) {
                    let hv = matvec(basis.last().unwrap());
                    hbasis.push(hv);
                }
            }
            (basis, hbasis)
        };
        let m = basis.len();
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = dot(&basis[i], &hbasis[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        let (vals, c) = sorted_eigen(g);
        let new_x: Vec<Vec<f64>> = (0..block).map(|j| combine(&basis, &c, j, 0..m)).collect();
        let new_hx: Vec<Vec<f64>> = (0..block).map(|j| combine(&hbasis, &c, j, 0..m)).collect();
        if m > block {
            p = (0..block).map(|j| combine(&basis, &c, j, block..m)).collect();
        }
        x = new_x;
        hx = new_hx;
        lambda.copy_from_slice(&vals[..block]);
        for i in 0..block {
            let mut r = hx[i].clone();
            axpy(-lambda[i], &x[i], &mut r);
            residuals[i] = dot(&r, &r).sqrt();
        }
        basis.clear();
        hbasis.clear();
        if residuals[..k].iter().all(|&r| r <= tol) {
            return Ok(EigenSystem {
                gamma: h.gamma,
                values: lambda[..k].to_vec(),
                vectors: x.into_iter().take(k).collect(),
                residuals: residuals[..k].to_vec(),
                iterations: iter,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: residuals[..k].iter().cloned().fold(0.0, f64::max),
    })
}

fn dense_eigenpairs(h: &SparseHamiltonian, k: usize) -> Result<EigenSystem> {
    let m = h.to_dense()?;
    let (vals, vecs) = sorted_eigen(m);
    let vectors: Vec<Vec<f64>> = (0..k).map(|j| vecs.column(j).iter().cloned().collect()).collect();
    let residuals = vectors
        .iter()
        .zip(&vals)
        .map(|(v, &l)| {
            let mut y = vec![0.0; v.len()];
            h.apply(v, &mut y);
            axpy(-l, v, &mut y);
            dot(&y, &y).sqrt()
        })
        .collect();
    Ok(EigenSystem {
        gamma: h.gamma,
        values: vals[..k].to_vec(),
        vectors,
        residuals,
        iterations: 0,
    })
}

/// E₁ − E₀ at `gamma`, warm-started from a previous eigensystem when given.
pub fn gap(problem: &IsingProblem, gamma: f64, warm_start: Option<&EigenSystem>) -> Result<(f64, EigenSystem)> {
    let h = assemble(problem, gamma)?;
    gap_of(&h, warm_start, &SolverOptions::default())
}

fn gap_of(h: &SparseHamiltonian, warm: Option<&EigenSystem>, opts: &SolverOptions) -> Result<(f64, EigenSystem)> {
    let sys = lowest_eigenpairs(h, 2, warm.map(|w| w.vectors.as_slice()), opts)?;
    Ok((sys.gap(), sys))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BracketStep {
    pub lo: f64,
    pub hi: f64,
    pub gamma: f64,
    pub gap: f64,
    pub derivative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceScale {
    pub device: String,
    pub s: f64,
    pub b_ghz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub j_t: f64,
    pub gamma_cross: f64,
    /// Gap at `gamma_cross`; the true minimum gap can only be smaller.
    pub gap_upper_bound: f64,
    pub final_bracket: (f64, f64),
    pub gap_at_bracket: (f64, f64),
    pub b_at_crossing: Vec<DeviceScale>,
    pub noise_floor_reached: bool,
    pub history: Vec<BracketStep>,
}

impl CrossingReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingOptions {
    pub bracket: (f64, f64),
    pub step: f64,
    pub min_width: f64,
    pub noise_ratio: f64,
    pub max_steps: usize,
    pub solver: SolverOptions,
}

impl Default for CrossingOptions {
    fn default() -> Self {
        CrossingOptions {
            bracket: (1e-4, 0.2),
            step: 1e-5,
            min_width: 1e-10,
            noise_ratio: 1e-6,
            max_steps: 200,
            solver: SolverOptions::default(),
        }
    }
}

struct GapProbe<'a> {
    h: SparseHamiltonian,
    opts: &'a SolverOptions,
    anchors: Vec<(f64, EigenSystem)>,
}

impl GapProbe<'_> {
    fn nearest(&self, gamma: f64) -> Option<&EigenSystem> {
        self.anchors
            .iter()
            .min_by(|a, b| (a.0 - gamma).abs().total_cmp(&(b.0 - gamma).abs()))
            .map(|(_, s)| s)
    }

    fn gap(&mut self, gamma: f64) -> Result<f64> {
        let h = self.h.with_gamma(gamma);
        let warm = self.nearest(gamma).cloned();
        let (g, sys) = gap_of(&h, warm.as_ref(), self.opts)?;
        self.anchors.push((gamma, sys));
        if self.anchors.len() > 8 {
            self.anchors.remove(0);
        }
        Ok(g)
    }

    fn derivative(&mut self, gamma: f64, step: f64) -> Result<f64> {
        let lo = (gamma - step).max(0.0);
        let hi = gamma + step;
        let g_hi = self.gap(hi)?;
        let g_lo = self.gap(lo)?;
        Ok((g_hi - g_lo) / (hi - lo))
    }
}

/// Bisection on the sign of the central-difference derivative of the gap.
pub fn locate_crossing(
    problem: &IsingProblem,
    j_t: f64,
    schedules: &[&ScheduleTable],
    opts: &CrossingOptions,
) -> Result<CrossingReport> {
    let (mut lo, mut hi) = opts.bracket;
    if !(lo >= 0.0 && hi > lo) {
        return Err(Error::out_of_range("bracket low end", lo, format!("[0, {hi})")));
    }
    let h1 = assemble(problem, 1.0)?;
    let seed_sys = lowest_eigenpairs(&h1, 5, None, &opts.solver)?;
    let mut guesses = seed_sys.vectors.clone();
    let diag = h1.diagonal();
    let ground = (0..diag.len())
        .min_by(|&a, &b| diag[a].total_cmp(&diag[b]))
        .expect("non-empty");
    let mut e = vec![0.0; diag.len()];
    e[ground] = 1.0;
    guesses.push(e);
    let seed = EigenSystem {
        gamma: 1.0,
        values: vec![0.0; guesses.len()],
        residuals: vec![0.0; guesses.len()],
        vectors: guesses,
        iterations: 0,
    };

    let mut probe = GapProbe {
        h: h1,
        opts: &opts.solver,
        anchors: vec![(lo, seed.clone()), (hi, seed)],
    };
    let d_lo = probe.derivative(lo, opts.step.min(0.5 * lo.max(opts.step)))?;
    let d_hi = probe.derivative(hi, opts.step)?;
    if !(d_lo < 0.0 && d_hi > 0.0) {
        return Err(Error::NoBracket { lo, hi });
    }

    let mut history = Vec::new();
    let mut noise_floor_reached = false;
    for _ in 0..opts.max_steps {
        if hi - lo <= opts.min_width {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = probe.gap(mid)?;
        let d = probe.derivative(mid, opts.step)?;
        history.push(BracketStep {
            lo,
            hi,
            gamma: mid,
            gap: g,
            derivative: d,
        });
        if d.abs() < opts.noise_ratio * g {
            noise_floor_reached = true;
            lo = mid;
            hi = mid;
            break;
        }
        if d < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let g_lo = probe.gap(lo)?;
    let g_hi = probe.gap(hi)?;
    let mid = 0.5 * (lo + hi);
    let g_mid = probe.gap(mid)?;
    let (gamma_cross, gap_upper_bound) = [(lo, g_lo), (mid, g_mid), (hi, g_hi)]
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("three candidates");

    let b_at_crossing = schedules
        .iter()
        .map(|t| {
            let s = t.s_of_gamma(gamma_cross)?;
            Ok(DeviceScale {
                device: t.label().to_string(),
                s,
                b_ghz: t.ab(s)?.1,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CrossingReport {
        j_t,
        gamma_cross,
        gap_upper_bound,
        final_bracket: (lo, hi),
        gap_at_bracket: (g_lo, g_hi),
        b_at_crossing,
        noise_floor_reached,
        history,
    })
}

/// Gap at each Γ in order, each solve warm-started from the previous one.
pub fn gap_sweep(problem: &IsingProblem, gammas: &[f64]) -> Result<Vec<(f64, f64)>> {
    let base = assemble(problem, 0.0)?;
    let opts = SolverOptions::default();
    let mut prev: Option<EigenSystem> = None;
    let mut out = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let (gap, sys) = gap_of(&base.with_gamma(g), prev.as_ref(), &opts)?;
        out.push((g, gap));
        prev = Some(sys);
    }
    Ok(out)
}

/// Rayleigh quotient `<v|H|v> / <v|v>`.
pub fn rayleigh_quotient(h: &SparseHamiltonian, v: &[f64]) -> f64 {
    let mut y = vec![0.0; v.len()];
    h.apply(v, &mut y);
    dot(v, &y) / dot(v, v)
}

/// Unit vector on the basis state of `config`.
pub fn basis_vector(config: &SpinConfig) -> Vec<f64> {
    let mut v = vec![0.0; 1 << config.len()];
    v[config.index()] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ising::Coupling;

    fn chain(n: usize) -> IsingProblem {
        let couplings = (0..n - 1)
            .map(|i| Coupling {
                i,
                j: i + 1,
                strength: if i % 2 == 0 { -1.0 } else { 0.5 },
            })
            .collect();
        let fields = (0..n).map(|i| 0.1 * (i as f64) - 0.3).collect();
        IsingProblem::new(n, couplings, fields).unwrap()
    }

    #[test]
    fn single_qubit_sigma_x() {
        let p = IsingProblem::new(1, vec![], vec![0.0]).unwrap();
        let h = assemble(&p, 1.0).unwrap();
        let sys = lowest_eigenpairs(&h, 2, None, &SolverOptions::default()).unwrap();
        assert!((sys.values[0] + 1.0).abs() < 1e-12);
        assert!((sys.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_is_diagonal() {
        let p = chain(5);
        let h = assemble(&p, 0.0).unwrap();
        for i in 0..h.dim() {
            assert_eq!(h.row(i).iter().filter(|(j, _)| *j != i).count(), 0);
        }
    }

    #[test]
    fn row_structure() {
        let p = chain(6);
        let h = assemble(&p, 0.4).unwrap();
        for i in [0, 5, 17, 63] {
            let row = h.row(i);
            let off = row.iter().filter(|(j, _)| *j != i).count();
            assert_eq!(off, 6);
            assert!(row.len() <= 7);
            assert!(row.iter().filter(|(j, _)| *j != i).all(|&(_, v)| v == -0.4));
        }
    }

    #[test]
    fn diagonal_matrix_min() {
        let h = SparseHamiltonian::from_diagonal(vec![3.0, -2.0, 5.0, 0.5], 0.0).unwrap();
        let sys = lowest_eigenpairs(&h, 1, None, &SolverOptions::default()).unwrap();
        assert_eq!(sys.values[0], -2.0);
    }

    #[test]
    fn iterative_matches_dense() {
        let p = chain(9);
        let h = assemble(&p, 0.7).unwrap();
        let dense = dense_eigenpairs(&h, 6).unwrap();
        let opts = SolverOptions {
            dense_limit: 0,
            ..SolverOptions::default()
        };
        let it = lowest_eigenpairs(&h, 6, None, &opts).unwrap();
        for (a, b) in it.values.iter().zip(&dense.values) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        for i in 0..6 {
            for j in 0..6 {
                let d = dot(&it.vectors[i], &it.vectors[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn warm_and_cold_agree() {
        let p = chain(10);
        let opts = SolverOptions {
            dense_limit: 0,
            ..SolverOptions::default()
        };
        let cold = lowest_eigenpairs(&assemble(&p, 0.3).unwrap(), 3, None, &opts).unwrap();
        let prev = lowest_eigenpairs(&assemble(&p, 0.32).unwrap(), 3, None, &opts).unwrap();
        let warm = lowest_eigenpairs(&assemble(&p, 0.3).unwrap(), 3, Some(&prev.vectors), &opts).unwrap();
        for (a, b) in cold.values.iter().zip(&warm.values) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn apply_is_symmetric() {
        let p = chain(8);
        let h = assemble(&p, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..h.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
        let v: Vec<f64> = (0..h.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut hu = vec![0.0; h.dim()];
        let mut hv = vec![0.0; h.dim()];
        h.apply(&u, &mut hu);
        h.apply(&v, &mut hv);
        assert!((dot(&u, &hv) - dot(&hu, &v)).abs() < 1e-12 * h.scale() * h.dim() as f64);
    }

    #[test]
    fn negative_gamma_rejected() {
        assert!(assemble(&chain(3), -0.1).is_err());
    }
}
