//! Passive communication through ambient wave noise.
//!
//! A tunable array of point scatterers modulates the imaginary part of its
//! reflectivity; a pair of receivers recovers the bits from the empirical
//! cross spectral density of the ambient field they record.

// Negated comparisons are used so that NaN fails validation; small fixed
// 3x3 loops read better with indices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod ecsd;
pub mod error;
pub mod kernel;
pub mod link;
pub mod media;
pub mod numeric;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
