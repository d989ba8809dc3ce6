//! Stochastic and deterministic Becker-Döring coagulation-fragmentation.
//!
//! Clusters of size `i` grow and shrink by one monomer at a time:
//!
//! ```text
//! C_1 + C_i  <->  C_{i+1}     forward rate a_i, backward rate b_{i+1}
//! ```
//!
//! The crate provides
//!
//! * [`kinetics`]: rate kernels, detailed-balance coefficients `Q_i`, the
//!   critical activity `z_s`, critical mass `rho_s` and equilibria `c^z`;
//! * [`state`]: finite configurations of `n` particles and their exact
//!   enumeration as integer partitions;
//! * [`ssa`]: exact Gillespie simulation with a sum-tree propensity index;
//! * [`ode`]: adaptive Dormand-Prince integration of the truncated
//!   deterministic equations;
//! * [`stationary`]: the product-form stationary law, its normalising
//!   constant, the non-equilibrium potential and relative entropy;
//! * [`experiments`]: drivers for the large-`n` convergence studies.

// NaN-rejecting `!(x > 0.0)` guards and index loops over parallel arrays are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod experiments;
pub mod kinetics;
pub mod ode;
pub mod rng;
pub mod ssa;
pub mod state;
pub mod stationary;

pub use error::{Error, Result};
pub use kinetics::{EquilibriumProfile, KernelFamily, KernelSpec, RateKernel};
pub use ode::{DbdState, IntegratorConfig, OdeSolution};
pub use ssa::{EnsembleStats, Simulator, Trajectory};
pub use state::{Configuration, Direction};
pub use stationary::{EntropyReport, StationaryTable};
