//! Numerical engine for Lagrangian and Hamiltonian mechanics on general
//! algebroids.
//!
//! An algebroid structure on a vector bundle `E -> M` is described locally by
//! structure functions `rho^a_i(x)`, `sigma^a_i(x)` (left/right anchors) and
//! `c^k_ij(x)` (bracket coefficients). This crate represents such structures
//! by parsed coordinate expressions, validates the skew / almost-Lie / Lie
//! subclass properties by sampling, evaluates the canonical objects (the
//! bivector `Pi`, the morphism `eps_E`, the relation `kappa`), and integrates
//! the associated unconstrained, nonholonomic and vaconomic dynamics.
//!
//! Modules follow the problem structure:
//! - [`expr`]: expression parsing and exact first/second derivatives,
//! - [`algebroid`]: structure functions and canonical maps,
//! - [`mechanics`]: Euler-Lagrange / Hamilton dynamics and the variational
//!   (Livens-type) verifier,
//! - [`constraints`]: constrained dynamics and nonholonomic reduction,
//! - [`models`]: built-in model registry and the model-file loader.

// Contractions are written in explicit index notation so they can be read
// against the formula bank; iterator chains would hide the tensor indices.
#![allow(clippy::needless_range_loop)]

pub mod algebroid;
pub mod constraints;
mod error;
pub mod expr;
pub mod linalg;
pub mod mechanics;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
