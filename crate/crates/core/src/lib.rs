//! Codomain attention neural operators on discretized functions.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod codano;
pub mod diagnostics;
pub mod diff;
pub mod error;
pub mod field;
pub mod gno;
pub mod hash;
pub mod simdata;
pub mod spectral;
pub mod train;

pub use error::{CodanoError, ErrorClass, Result};
