//! Saddle-type solutions of Hamilton-Jacobi equations near a hyperbolic
//! critical point.

// NaN must fail validation, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod flow;
pub mod hamiltonian;
pub mod jet;
pub mod model_case;
pub mod ode;
pub mod series;
pub mod sfs;
pub mod surface;
pub mod verify;

pub use error::{Error, Result};
