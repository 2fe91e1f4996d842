//! Finite-difference time-domain simulation of photonic-crystal slab cavities
//! and analysis of spontaneous-emission rate modification.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Axis loops index several per-component arrays at once.
#![allow(clippy::needless_range_loop)]

pub mod ensemble;
pub mod error;
pub mod fdtd;
pub mod fit;
pub mod geometry;
pub mod modal;
pub mod photon;
pub mod sources;
pub mod units;

pub use error::{Error, Result};
