//! Matrix-product density-operator toolkit for high-temperature transport in
//! integrable one-dimensional lattice models.
//!
//! The crate provides, end to end:
//!
//! * construction of integrable nearest-neighbour Hamiltonians built from
//!   permutation and reflection operators (`SU(N)`, `SO(N)`, `Sp(N)`, graded
//!   superalgebra chains, the spin-1 Izergin–Korepin model, and the XXZ
//!   chain), together with their symmetry generators ([`algebra`]);
//! * a matrix-product density-operator state class over a real Hermitian
//!   operator basis, with product-state and weakly polarized initial states
//!   ([`mpdo`]);
//! * Trotterized Heisenberg-picture evolution with a
//!   density-matrix-truncation compression step that preserves the trace and
//!   all few-site observables around each cut exactly ([`engine`]);
//! * charge/energy profile observables and hydrodynamic post-processing
//!   ([`observables`]);
//! * scaling-function analysis against tabulated universal shapes
//!   ([`scaling`]);
//! * exact dense-matrix evolution for small chains, used as a cross-check
//!   oracle ([`oracle`]);
//! * cold-atom experiment planning helpers ([`planner`]);
//! * run configuration, trajectory output, and checkpointing ([`config`],
//!   [`io`], [`run`]).

pub mod algebra;
pub mod basis;
pub mod config;
pub mod engine;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mpdo;
pub mod observables;
pub mod oracle;
pub mod planner;
pub mod run;
pub mod scaling;

pub use error::{Error, Result};
