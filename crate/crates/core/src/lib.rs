//! Phase-space simulation and estimation for impulsive-force sensing with a
//! continuously monitored, frequency-switched harmonic oscillator.
//!
//! All phase-space quantities are dimensionless: positions and momenta are
//! measured in units of the zero-point values at the base trap frequency, so
//! the ground state has unit variance in both quadratures.
//!
//! The crate is `no_std` (with `alloc`); file formats, the command-line tool
//! and parallel execution live in the companion `levsense` crate.

#![no_std]
// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;

pub mod dynamics;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod protocol;
pub mod record;
pub mod units;

pub use error::{Error, Result};
pub use linalg::{Mat2, Vec2};
