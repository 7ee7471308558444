//! Free motion of a particle on a quartically perturbed sphere, and the
//! averaged Hamiltonian system that governs the slow precession of its
//! angular momentum.
//!
//! - [`surface`]: exact constrained dynamics and integration.
//! - [`averaged`]: averaged momentum field, Hamiltonian, reduced integration.
//! - [`stationary`]: closed-form fixed points and their stability.
//! - [`portrait`]: separatrix tracing and the Type I–IV graph label.
//! - [`atlas`]: algebraic classification of deformation space.
//! - [`validation`]: averaging oracle and exact-vs-averaged comparison.
//! - [`cli`]: configuration and run dispatch for the `precession` binary.

pub mod atlas;
pub mod averaged;
pub mod cli;
pub mod error;
pub mod io;
pub mod ode;
pub mod par;
pub mod portrait;
pub mod stationary;
pub mod surface;
pub mod validation;

pub use error::{Error, Result};
pub use par::Execution;
pub use surface::{IntegratorSettings, ParticleState, SurfaceParams};
