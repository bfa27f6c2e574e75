//! Reverse-annealing search-range simulator.
//!
//! The crate builds a 16-qubit Ising gadget with a narrow true minimum next to a
//! start state and a broad, slightly higher false minimum far away, then studies
//! how reverse annealing to an intermediate point `s*` moves probability between
//! them.

pub mod analysis;
pub mod chimera;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod gadget;
pub mod ising;
pub mod schedule;
pub mod spectrum;

pub use error::{Error, Result};
