//! Cooperative storage allocation games: instances, potentials, feasibility,
//! Gibbs move dynamics, exact finite-state analysis and an experiment harness.

pub mod dynamics;
pub mod exact;
pub mod feasibility;
pub mod harness;
pub mod model;
pub mod moves;
pub mod sampler;
