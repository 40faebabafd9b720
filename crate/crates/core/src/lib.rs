//! Space-time Petrov-Galerkin finite elements for the time-fractional
//! diffusion equation `∂_t^α u - Δu = f` with zero initial data, where
//! `∂_t^α` is the left-sided Riemann-Liouville derivative of order `α ∈ (0, 1)`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod error;
pub mod fem;
pub mod frac_ode;
pub mod frac_time;
pub mod gamma;
pub mod published;
pub mod quadrature;
pub mod source;
pub mod spacetime;
pub mod study;
pub mod special_fn;

pub use error::{Error, Result};
