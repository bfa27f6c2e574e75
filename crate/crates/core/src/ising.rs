//! Classical Ising problems over ±1 spins.
//!
//! Spin convention: `+1` is bit `0` (arrow up), `-1` is bit `1`. Bitstrings put
//! qubit 0 in the leftmost character, so the basis index of a configuration is
//! the bitstring read as a binary number and index order equals lexicographic
//! bitstring order.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest problem the exhaustive routines accept.
pub const MAX_ENUMERATION_QUBITS: usize = 24;

/// Largest |J| and |h| the hardware can represent.
pub const MAX_COEFFICIENT: f64 = 2.0;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinConfig(Vec<i8>);

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidProblem(format!("spin value {bad} is not ±1")));
        }
        Ok(SpinConfig(spins))
    }

    pub fn all_up(n: usize) -> Self {
        SpinConfig(vec![1; n])
    }

    /// Configuration for basis index `index` of an `n`-qubit register.
    pub fn from_index(index: usize, n: usize) -> Self {
        SpinConfig(
            (0..n)
                .map(|q| if (index >> (n - 1 - q)) & 1 == 0 { 1 } else { -1 })
                .collect(),
        )
    }

    pub fn index(&self) -> usize {
        let n = self.0.len();
        self.0
            .iter()
            .enumerate()
            .fold(0usize, |acc, (q, &s)| if s == -1 { acc | (1 << (n - 1 - q)) } else { acc })
    }

    pub fn from_bits(bits: &str) -> Result<Self> {
        bits.chars()
            .map(|c| match c {
                '0' => Ok(1),
                '1' => Ok(-1),
                other => Err(Error::Parse(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<i8>>>()
            .map(SpinConfig)
    }

    pub fn to_bits(&self) -> String {
        self.0.iter().map(|&s| if s == 1 { '0' } else { '1' }).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.0
    }

    pub fn get(&self, q: usize) -> i8 {
        self.0[q]
    }

    pub fn flip(&mut self, q: usize) {
        self.0[q] = -self.0[q];
    }

    pub fn flipped(&self, q: usize) -> Self {
        let mut c = self.clone();
        c.flip(q);
        c
    }

    /// Elementwise product with `mask`; applying the same mask twice is the identity.
    pub fn gauged(&self, mask: &SpinConfig) -> Result<Self> {
        check_len(self.len(), mask.len())?;
        Ok(SpinConfig(
            self.0.iter().zip(&mask.0).map(|(a, b)| a * b).collect(),
        ))
    }
}

impl fmt::Debug for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpinConfig({})", self.to_bits())
    }
}

impl fmt::Display for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bits())
    }
}

impl Serialize for SpinConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_bits())
    }
}

impl<'de> Deserialize<'de> for SpinConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SpinConfig::from_bits(&s).map_err(serde::de::Error::custom)
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub i: usize,
    pub j: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemFile", into = "ProblemFile")]
pub struct IsingProblem {
    n_qubits: usize,
    couplings: Vec<Coupling>,
    fields: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProblemFile {
    n_qubits: usize,
    couplings: Vec<(usize, usize, f64)>,
    fields: Vec<f64>,
}

impl TryFrom<ProblemFile> for IsingProblem {
    type Error = Error;

    fn try_from(f: ProblemFile) -> Result<Self> {
        let couplings = f
            .couplings
            .into_iter()
            .map(|(i, j, strength)| Coupling { i, j, strength })
            .collect();
        IsingProblem::new(f.n_qubits, couplings, f.fields)
    }
}

impl From<IsingProblem> for ProblemFile {
    fn from(p: IsingProblem) -> Self {
        ProblemFile {
            n_qubits: p.n_qubits,
            couplings: p.couplings.iter().map(|c| (c.i, c.j, c.strength)).collect(),
            fields: p.fields,
        }
    }
}

impl IsingProblem {
    pub fn new(n_qubits: usize, couplings: Vec<Coupling>, fields: Vec<f64>) -> Result<Self> {
        if n_qubits == 0 {
            return Err(Error::InvalidProblem("n_qubits must be positive".into()));
        }
        check_len(n_qubits, fields.len())?;
        for (q, h) in fields.iter().enumerate() {
            if !h.is_finite() || h.abs() > MAX_COEFFICIENT {
                return Err(Error::InvalidProblem(format!(
                    "field h[{q}] = {h} exceeds |h| <= {MAX_COEFFICIENT}"
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for c in &couplings {
            if c.i >= c.j {
                return Err(Error::InvalidProblem(format!(
                    "coupling ({}, {}) must satisfy i < j",
                    c.i, c.j
                )));
            }
            if c.j >= n_qubits {
                return Err(Error::InvalidProblem(format!(
                    "coupling ({}, {}) references a qubit >= {n_qubits}",
                    c.i, c.j
                )));
            }
            if !c.strength.is_finite() || c.strength.abs() > MAX_COEFFICIENT {
                return Err(Error::InvalidProblem(format!(
                    "coupling J[{}][{}] = {} exceeds |J| <= {MAX_COEFFICIENT}",
                    c.i, c.j, c.strength
                )));
            }
            if !seen.insert((c.i, c.j)) {
                return Err(Error::InvalidProblem(format!(
                    "duplicate coupling ({}, {})",
                    c.i, c.j
                )));
            }
        }
        Ok(IsingProblem {
            n_qubits,
            couplings,
            fields,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn coupling(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.couplings
            .iter()
            .find(|c| c.i == a && c.j == b)
            .map(|c| c.strength)
    }

    /// Σ J_ij s_i s_j + Σ h_i s_i.
    pub fn energy(&self, config: &SpinConfig) -> Result<f64> {
        check_len(self.n_qubits, config.len())?;
        Ok(self.energy_unchecked(config.spins()))
    }

    fn energy_unchecked(&self, s: &[i8]) -> f64 {
        let pair: f64 = self
            .couplings
            .iter()
            .map(|c| c.strength * f64::from(s[c.i] * s[c.j]))
            .sum();
        let field: f64 = self
            .fields
            .iter()
            .zip(s)
            .map(|(h, &si)| h * f64::from(si))
            .sum();
        pair + field
    }

    /// Energy of basis index `index` under the bit convention of [`SpinConfig::from_index`].
    pub fn energy_of_index(&self, index: usize) -> f64 {
        let n = self.n_qubits;
        let spin = |q: usize| if (index >> (n - 1 - q)) & 1 == 0 { 1.0 } else { -1.0 };
        let pair: f64 = self
            .couplings
            .iter()
            .map(|c| c.strength * spin(c.i) * spin(c.j))
            .sum();
        let field: f64 = self.fields.iter().enumerate().map(|(q, h)| h * spin(q)).sum();
        pair + field
    }

    /// Energy change from flipping qubit `q` of `config`.
    pub fn flip_delta(&self, config: &SpinConfig, q: usize) -> f64 {
        let s = config.spins();
        let mut local = self.fields[q];
        for c in &self.couplings {
            if c.i == q {
                local += c.strength * f64::from(s[c.j]);
            } else if c.j == q {
                local += c.strength * f64::from(s[c.i]);
            }
        }
        -2.0 * f64::from(s[q]) * local
    }

    /// Energies of all 2^n basis states, indexed by basis index.
    pub fn energies(&self) -> Result<Vec<f64>> {
        if self.n_qubits > MAX_ENUMERATION_QUBITS {
            return Err(Error::TooLarge {
                n: self.n_qubits,
                max: MAX_ENUMERATION_QUBITS,
            });
        }
        let dim = 1usize << self.n_qubits;
        let mut out = vec![0.0; dim];
        out.par_chunks_mut(4096)
            .enumerate()
            .for_each(|(chunk, slice)| {
                for (k, e) in slice.iter_mut().enumerate() {
                    *e = self.energy_of_index(chunk * 4096 + k);
                }
            });
        Ok(out)
    }

    /// All configurations with their energies, ascending; ties in lexicographic order.
    pub fn enumerate(&self) -> Result<Vec<(f64, SpinConfig)>> {
        let energies = self.energies()?;
        let mut order: Vec<usize> = (0..energies.len()).collect();
        // stable sort over index order keeps ties lexicographic
        order.sort_by(|&a, &b| energies[a].partial_cmp(&energies[b]).expect("energies are finite"));
        Ok(order
            .into_iter()
            .map(|i| (energies[i], SpinConfig::from_index(i, self.n_qubits)))
            .collect())
    }

    /// h_i -> m_i h_i, J_ij -> m_i m_j J_ij.
    pub fn gauge_transform(&self, mask: &SpinConfig) -> Result<IsingProblem> {
        check_len(self.n_qubits, mask.len())?;
        let m = mask.spins();
        Ok(IsingProblem {
            n_qubits: self.n_qubits,
            couplings: self
                .couplings
                .iter()
                .map(|c| Coupling {
                    strength: c.strength * f64::from(m[c.i] * m[c.j]),
                    ..*c
                })
                .collect(),
            fields: self
                .fields
                .iter()
                .zip(m)
                .map(|(h, &mi)| h * f64::from(mi))
                .collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn hamming(a: &SpinConfig, b: &SpinConfig) -> Result<usize> {
    check_len(a.len(), b.len())?;
    Ok(a.spins().iter().zip(b.spins()).filter(|(x, y)| x != y).count())
}
