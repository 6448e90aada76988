//! Sectional solver and diagnostics for the coagulation equation with
//! singular kernels, together with analytic and stochastic references.
//!
//! The pipeline is: pick a kernel ([`kernels`]), project an initial profile
//! onto a size grid ([`grid`]), integrate the cut-off system ([`solver`]),
//! then check the a-priori bounds ([`diagnostics`]) or compare against the
//! closed-form and Marcus-Lushnikov references ([`oracle`]).

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod oracle;
pub mod profile;
pub mod solver;

pub use error::{CoagError, Result};
pub use grid::{DensityState, SizeGrid};
pub use kernels::{CutoffParam, KernelFamily, KernelSpec, SingularBound};
pub use profile::InitialProfile;
pub use solver::{SolverConfig, Trajectory};
