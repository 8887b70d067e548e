//! Robust optimal stopping under divergence risk measures.
//!
//! The crate prices Bermudan-style options whose payoff is evaluated by an
//! optimized certainty equivalent rather than an expectation. The primal side
//! is a regression (least-squares Monte Carlo) policy, the dual side a nested
//! simulation martingale; both reduce to ordinary stopping problems for the
//! transformed reward `phi*(x + Y) - x` at a fixed shift `x`.
//!
//! [`lattice`] holds exact finite-tree counterparts used as test oracles.

pub mod divergence;
pub mod dual;
pub mod error;
pub mod experiment;
pub mod lattice;
pub mod lsm;
pub mod market;
pub mod oracle;
pub mod search;
pub mod stats;

pub use divergence::{entropic_closed_form, oce_objective, oce_value, phi_star, DivergenceSpec};
pub use dual::{dual_value, upper_bound, DualConfig};
pub use error::{Error, ErrorClass, Result};
pub use lattice::{EmpiricalDistribution, Lattice, RandomizedKernel, SnellResult, StoppingRule};
pub use lsm::{
    fit_policy, lower_bound, primal_value, BasisSpec, BoundEstimate, BoundKind, PrimalResult, PrimalSetup,
    RegressionPolicy,
};
pub use market::{simulate_paths, ExerciseGrid, GbmParams, PathSet, PayoffSpec};
pub use search::ShiftSearchConfig;
