//! Simulation and verification toolkit for the discrete-time branching
//! annihilating random walk on `Z^d`, its coupled map lattice, and the
//! comparison machinery used to analyse it.
//!
//! A configuration evolves by `eta_{n+1}(x) = 1{U(x, n+1) <= phi_mu(delta_R(x; eta_n))}`
//! where `delta_R` is the occupied fraction of the sup-norm ball of radius
//! `R` and `phi_mu(w) = mu w e^{-mu w}`.

// `!(x > 0.0)` style guards are used on purpose so NaN falls into the error arm.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod cml;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod profiles;
pub mod rng;
pub mod thresholds;

pub use error::{Error, Result};
