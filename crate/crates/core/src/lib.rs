//! Health-aware, user-involved battery charging with linear quadratic control.
//!
//! The crate models a cell with a two-capacitor RC equivalent circuit and
//! offers three charging strategies on top of it:
//!
//! - [`fts`]: LQ control with a fixed terminal state, where the user's target
//!   SoC and deadline become a hard terminal constraint;
//! - [`tracking`]: finite-horizon and steady-state LQ tracking of a reference
//!   charging path;
//! - a constant-current baseline, used by [`sim`] for comparison.
//!
//! Controllers consume state predictions from the one-step Kalman predictor in
//! [`kalman`]. [`sim`] closes the loop against a noisy plant and writes CSV
//! traces.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod battery;
pub mod error;
pub mod fts;
pub mod kalman;
pub mod linalg;
pub mod riccati;
pub mod sim;
pub mod system;
pub mod tracking;

pub use error::{Error, Result};
