//! Population-based incomplete DCOP solving.
//!
//! The crate bundles:
//! - an exact integer DCOP model with validation and a brute-force oracle
//!   ([`model`]),
//! - a deterministic synchronous multi-agent simulator ([`engine`]) over a
//!   BFS pseudo-tree ([`tree`]),
//! - tree-based anytime cost tracking for local search, single- and
//!   multi-system ([`als`]),
//! - the solvers: anytime evolutionary search ([`aed`]), parallel simulated
//!   annealing with temperature-region learning ([`dpsa`]) and the DSA-C /
//!   DSAN baselines ([`baselines`]),
//! - seeded benchmark generators ([`benchgen`]) and an experiment harness
//!   with statistics ([`experiment`]).

pub mod aed;
pub mod als;
pub mod baselines;
pub mod benchgen;
pub mod dpsa;
pub mod engine;
pub mod experiment;
pub mod model;
pub mod stats;
pub mod tree;

#[cfg(test)]
pub(crate) mod testutil;

pub use model::{AgentId, Cost, DcopInstance, Value};
