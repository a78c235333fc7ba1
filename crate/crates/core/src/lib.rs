//! Block stochastic gradient descent with a total-variation proximal step
//! (BSGD-TV) for sparse linear inverse problems, together with the baselines
//! it is usually compared against and a small fan-beam CT simulator.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: block-partitioned CSR operator with an instrumented product
//!   counter,
//! - [`tv`]: isotropic total variation and its proximal map,
//! - [`spectral`]: step-size analysis of the stale-gradient iteration,
//! - [`solvers`]: BSGD-TV, ISTA, gradient descent and block ADMM-TV,
//! - [`sim`]: Shepp-Logan phantom, fan-beam projector and noise model,
//! - [`metrics`]: relative error and objective value,
//! - [`plot`] and [`config`]: output plumbing used by the `bsgd-tv` binary.

pub mod config;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod plot;
pub mod sim;
pub mod solvers;
pub mod spectral;
pub mod tv;

pub use error::{Error, Result};
pub use linalg::{assemble_residual, make_partition, BlockOperator, BlockPartition, SparseMatrix};
pub use metrics::{objective_value, relative_error};
pub use solvers::{run_solver, ConvergenceTrace, Problem, SolverConfig, SolverKind, SolverState};
pub use tv::{tv_prox, tv_value, ImageGrid, PixelLayout, ProxSettings};
