//! Fermionic QAOA with cyclic and ladder tight-binding drivers, simulated on
//! dense statevectors and applied to constrained portfolio selection.
//!
//! Feasible portfolios are bitstrings of fixed Hamming weight `M`; the ansatz
//! conserves fermion number, so every noiseless output stays in that sector.

pub mod analysis;
pub mod basis;
pub mod circuits;
pub mod cli;
pub mod driver;
pub mod error;
pub mod instance;
pub mod linalg;
pub mod schedule;
pub mod statevector;

pub use error::{Error, Result};
