//! Numerical laboratory for one-dimensional boundary-driven and periodic
//! stochastic lattice gases.
//!
//! The crate couples two levels of description:
//!
//! * a microscopic, exact-in-law kinetic Monte Carlo sampler for the
//!   boundary-driven symmetric simple exclusion process ([`microsim`]);
//! * deterministic numerics on the macroscopic interval `[0, 1]`: the
//!   hydrodynamic equations ([`pde`]), the static and dynamical density
//!   large-deviation functionals ([`density_ldf`]), the quasi-potential and
//!   its optimal fluctuation paths ([`quasipotential`]), the current rate
//!   functional ([`current_ldf`]) and time-averaged current phase diagrams
//!   ([`phase`]).
//!
//! Transport models (diffusion `D`, mobility `χ`, field `E`, geometry) live
//! in [`models`].

pub mod current_ldf;
pub mod density_ldf;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod microsim;
pub mod models;
pub mod ode;
pub mod pde;
pub mod phase;
pub mod quasipotential;
pub mod stats;
pub mod stencil;

pub use error::{Error, Result};
pub use grid::{FieldKind, Grid, GridFunction, PathKind, SpaceTimePath};
pub use models::{Geometry, TransportModel};

/// Sentinel for an infinite cost.
///
/// Rate functionals are extended-real valued. Whenever a path is not
/// admissible (density touching a degenerate point of the mobility, or
/// leaving the model's density range) the functionals return this value
/// instead of overflowing.
pub const INFINITE_COST: f64 = f64::INFINITY;

/// `true` when `value` is the [`INFINITE_COST`] sentinel.
pub fn is_infinite_cost(value: f64) -> bool {
    value == INFINITE_COST
}
