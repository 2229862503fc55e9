//! Markovian integral equations on discretised time-inhomogeneous Markov
//! chains:
//!
//! ```text
//! u(t_j, x) = E_{t_j,x}[g(X_T)] − E_{t_j,x}[ Σ_{l ≥ j} w_l f(t_l, X_{t_l}, u) ]
//! ```
//!
//! A [`TimeGrid`] carries the nodes and quadrature weights, a
//! [`MarkovChainModel`] the per-step transition matrices, and a
//! [`Generator`] the driver `f` with its domain. The solvers live in
//! [`solver`], linear drivers in [`feynman_kac`], and the inequality checkers
//! in [`verify`].

// guards like `!(x > 0.0)` are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod feynman_kac;
pub mod generator;
pub mod markov;
pub mod solver;
pub mod timegrid;
pub mod verify;

pub use error::{Error, Result};
pub use generator::{Compact, Domain, Generator, Interval};
pub use markov::{MarkovChainModel, PathSample};
pub use solver::{DriverEvaluation, PicardOptions, SolutionField, SolveReport};
pub use timegrid::TimeGrid;
