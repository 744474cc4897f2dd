//! Simulation and analysis of gravity-induced Ramsey fringes on the spin-1
//! NV center of a levitated nanodiamond.
//!
//! Units throughout the dynamical modules: ħ = 1, energies in units of ħω_z,
//! times in units of 1/ω_z, so that one axial oscillation period is
//! `t₀ = 2π`. Laboratory units appear only in [`model::PhysicalParams`] and
//! in [`trapdata`].
//!
//! Basis ordering is fixed across the crate: spin ⊗ x ⊗ y ⊗ z (modes that
//! are absent are simply omitted), with the spin factor ordered
//! `|+1⟩, |0⟩, |−1⟩`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod evolver;
pub mod hilbert;
pub mod model;
pub mod perturb;
pub mod ramsey;
pub mod trapdata;

pub use error::{Error, Result};
pub use hilbert::C64;

/// One axial oscillation period in units of 1/ω_z.
pub const PERIOD: f64 = std::f64::consts::TAU;
