//! Curve learning with repulsive latent coordinates.
//!
//! A Coulomb repulsive process prior spreads one-dimensional latent
//! coordinates over (0,1); independent Gaussian processes map them into
//! data space. Joint MAP estimation recovers a smooth curve through the
//! data together with calibrated predictive uncertainty.

// Validation guards negate comparisons on purpose: `!(x > 0.0)` and
// `!(err <= tol)` reject NaN along with the range violation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix arithmetic they implement.
#![allow(clippy::needless_range_loop)]

pub mod corp;
pub mod error;
pub mod fit;
pub mod gp;
pub mod infer;
pub mod lle;
pub mod model;
pub mod scg;

pub use error::{Error, Result};
pub use fit::{FitOptions, FittedModel, HyperParams, LatentConfig};
