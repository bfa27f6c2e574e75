//! Chimera hardware graph and tiling of many disjoint gadget copies.
//!
//! Qubit ids follow `((row * cols + col) * 8) + side * 4 + k`, where side 0 is the
//! vertical half of a unit cell (coupled to the same `k` in the cells above and
//! below) and side 1 the horizontal half (coupled left and right).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ising::IsingProblem;

pub const CELL_SIDE: usize = 4;
pub const CELL_QUBITS: usize = 2 * CELL_SIDE;

/// Cell offset and in-cell position of one embedded qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Site {
    pub dr: usize,
    pub dc: usize,
    pub side: usize,
    pub k: usize,
}

const fn site(dr: usize, dc: usize, side: usize, k: usize) -> Site {
    Site { dr, dc, side, k }
}

/// Default gadget embedding over a 2×2 block of cells using in-cell indices 0 and 1.
/// The inner ring runs around the block; each pendant sits in its ring qubit's
/// cell on the opposite side. A second copy fits in the same block with indices
/// shifted by [`VARIANT_SHIFT`].
pub const DEFAULT_EMBEDDING: [Site; 16] = [
    site(0, 0, 1, 0),
    site(0, 1, 1, 0),
    site(0, 1, 0, 0),
    site(1, 1, 0, 0),
    site(1, 1, 1, 0),
    site(1, 0, 1, 0),
    site(1, 0, 0, 0),
    site(0, 0, 0, 0),
    site(0, 0, 0, 1),
    site(0, 1, 0, 1),
    site(0, 1, 1, 1),
    site(1, 1, 1, 1),
    site(1, 1, 0, 1),
    site(1, 0, 0, 1),
    site(1, 0, 1, 1),
    site(0, 0, 1, 1),
];
pub const BLOCK: usize = 2;
pub const VARIANTS: usize = 2;
pub const VARIANT_SHIFT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChimeraGraph {
    pub rows: usize,
    pub cols: usize,
}

impl ChimeraGraph {
    pub fn new(rows: usize, cols: usize) -> Self {
        ChimeraGraph { rows, cols }
    }

    pub fn n_qubits(&self) -> usize {
        self.rows * self.cols * CELL_QUBITS
    }

    pub fn qubit(&self, row: usize, col: usize, side: usize, k: usize) -> usize {
        (row * self.cols + col) * CELL_QUBITS + side * CELL_SIDE + k
    }

    /// (row, col, side, k) of a hardware qubit.
    pub fn coords(&self, q: usize) -> (usize, usize, usize, usize) {
        let cell = q / CELL_QUBITS;
        let within = q % CELL_QUBITS;
        (cell / self.cols, cell % self.cols, within / CELL_SIDE, within % CELL_SIDE)
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        if a >= self.n_qubits() || b >= self.n_qubits() || a == b {
            return false;
        }
        let (ra, ca, sa, ka) = self.coords(a);
        let (rb, cb, sb, kb) = self.coords(b);
        if (ra, ca) == (rb, cb) {
            return sa != sb;
        }
        if sa != sb || ka != kb {
            return false;
        }
        match sa {
            0 => ca == cb && ra.abs_diff(rb) == 1,
            _ => ra == rb && ca.abs_diff(cb) == 1,
        }
    }

    pub fn n_edges(&self) -> usize {
        let cells = self.rows * self.cols;
        cells * CELL_SIDE * CELL_SIDE
            + CELL_SIDE * (self.rows.saturating_sub(1) * self.cols + self.rows * self.cols.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChimeraLayout {
    pub graph: ChimeraGraph,
    pub dead_qubits: BTreeSet<usize>,
    /// `copy_maps[c][g]` is the hardware qubit hosting gadget qubit `g` in copy `c`.
    pub copy_maps: Vec<Vec<usize>>,
}

impl ChimeraLayout {
    pub fn n_copies(&self) -> usize {
        self.copy_maps.len()
    }

    /// Checks injectivity, disjointness, dead-qubit avoidance and that every
    /// problem edge lands on a hardware edge.
    pub fn validate(&self, problem: &IsingProblem) -> Result<()> {
        let mut used = BTreeSet::new();
        for (c, map) in self.copy_maps.iter().enumerate() {
            if map.len() != problem.n_qubits() {
                return Err(Error::LengthMismatch {
                    expected: problem.n_qubits(),
                    actual: map.len(),
                });
            }
            for &q in map {
                if q >= self.graph.n_qubits() {
                    return Err(Error::Embedding(format!("copy {c}: qubit {q} not on the graph")));
                }
                if self.dead_qubits.contains(&q) {
                    return Err(Error::Embedding(format!("copy {c}: uses dead qubit {q}")));
                }
                if !used.insert(q) {
                    return Err(Error::Embedding(format!("copy {c}: qubit {q} used twice")));
                }
            }
            for e in problem.couplings() {
                if !self.graph.has_edge(map[e.i], map[e.j]) {
                    return Err(Error::Embedding(format!(
                        "copy {c}: edge ({}, {}) maps to non-edge ({}, {})",
                        e.i, e.j, map[e.i], map[e.j]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

fn place(graph: &ChimeraGraph, row: usize, col: usize, variant: usize) -> Vec<usize> {
    DEFAULT_EMBEDDING
        .iter()
        .map(|s| graph.qubit(row + s.dr, col + s.dc, s.side, s.k + variant * VARIANT_SHIFT))
        .collect()
}

/// Greedy row-major placement of the default embedding at every block origin
/// and variant, keeping each copy that is disjoint from earlier ones and free of
/// dead qubits. The result is maximal: no further copy of the default
/// embedding fits.
pub fn tile(problem: &IsingProblem, rows: usize, cols: usize, dead_qubits: &BTreeSet<usize>) -> Result<ChimeraLayout> {
    if problem.n_qubits() != DEFAULT_EMBEDDING.len() {
        return Err(Error::Embedding(format!(
            "default embedding hosts {} qubits, problem has {}",
            DEFAULT_EMBEDDING.len(),
            problem.n_qubits()
        )));
    }
    let graph = ChimeraGraph::new(rows, cols);
    if let Some(&q) = dead_qubits.iter().find(|&&q| q >= graph.n_qubits()) {
        return Err(Error::Embedding(format!("dead qubit {q} not on a {rows}x{cols} graph")));
    }
    // Edge check on an isolated block so the error names the gadget edge.
    let probe = ChimeraGraph::new(BLOCK, BLOCK);
    for v in 0..VARIANTS {
        let map = place(&probe, 0, 0, v);
        for e in problem.couplings() {
            if !probe.has_edge(map[e.i], map[e.j]) {
                return Err(Error::Embedding(format!(
                    "gadget edge ({}, {}) has no hardware coupler under the default embedding",
                    e.i, e.j
                )));
            }
        }
    }

    let mut used = vec![false; graph.n_qubits()];
    for &q in dead_qubits {
        used[q] = true;
    }
    let mut copy_maps = Vec::new();
    if rows >= BLOCK && cols >= BLOCK {
        for r in 0..=rows - BLOCK {
            for c in 0..=cols - BLOCK {
                for v in 0..VARIANTS {
                    let map = place(&graph, r, c, v);
                    if map.iter().all(|&q| !used[q]) {
                        for &q in &map {
                            used[q] = true;
                        }
                        copy_maps.push(map);
                    }
                }
            }
        }
    }
    let layout = ChimeraLayout {
        graph,
        dead_qubits: dead_qubits.clone(),
        copy_maps,
    };
    layout.validate(problem)?;
    Ok(layout)
}

/// Dead qubits at the left edge of the graph, one per (block row, variant) in
/// row-major order. Each knocks the greedy tiling of its block row one cell to
/// the right, which costs exactly one copy while `count <= VARIANTS * rows / BLOCK`.
pub fn edge_defects(rows: usize, cols: usize, count: usize) -> Result<BTreeSet<usize>> {
    let graph = ChimeraGraph::new(rows, cols);
    let capacity = VARIANTS * (rows / BLOCK);
    if count > capacity || cols < BLOCK {
        return Err(Error::Embedding(format!(
            "{count} edge defects do not fit a {rows}x{cols} graph (at most {capacity})"
        )));
    }
    let anchor = DEFAULT_EMBEDDING[0];
    Ok((0..count)
        .map(|j| {
            let (block_row, variant) = (j / VARIANTS, j % VARIANTS);
            graph.qubit(BLOCK * block_row + anchor.dr, anchor.dc, anchor.side, anchor.k + variant * VARIANT_SHIFT)
        })
        .collect())
}
