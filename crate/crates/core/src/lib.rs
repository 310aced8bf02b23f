//! Distributed stochastic gradient tracking (DSGT) over undirected networks.
//!
//! The crate is split along the lines of the method itself:
//!
//! * [`topology`] builds communication graphs and Metropolis mixing matrices,
//!   and computes the spectral quantities the convergence theory consumes.
//! * [`oracle`] defines the stochastic first-order oracle and the two
//!   concrete problems (online ridge regression, synthetic quadratic).
//! * [`engine`] runs the per-agent recursion and the centralized baseline.
//! * [`theory`] evaluates step-size caps, the 3x3 error-coupling matrix,
//!   its spectral radius, and the limiting error bounds.
//! * [`harness`] ties everything into reproducible Monte Carlo experiments
//!   with CSV/JSON outputs.

pub mod engine;
pub mod harness;
mod linalg;
pub mod oracle;
pub mod rng;
pub mod theory;
pub mod topology;

pub use engine::{CentralState, EngineError, MetricsRow, SwarmState};
pub use oracle::{Problem, ProblemConstants, QuadraticProblem, RidgeProblem, StochasticOracle};
pub use theory::{TheoryError, TheoryInputs, TheoryReport};
pub use topology::{Adjacency, Network, TopologyError, ValidationReport};
