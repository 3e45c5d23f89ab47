//! Restricted propagators, class operators and decoherence functionals for
//! remain/leave histories of a particle in a box or a two-level system.

// NaN must fail parameter checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod model;
pub mod propagators;
pub mod histories;
pub mod scenarios;
pub mod config;
pub mod runner;

pub use error::{Result, ZenoError};
