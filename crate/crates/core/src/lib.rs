// `!(x > 0.0)` is the NaN-rejecting form used in every precondition check;
// index loops mirror the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod abrikosov;
pub mod bundle;
pub mod cuspforms;
pub mod error;
pub mod group;
pub mod linalg;
pub mod mesh;
pub mod solver;
pub mod spectra;
pub mod symbolic;
pub mod whittaker;

pub use error::{Error, Result};

/// Crate version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
