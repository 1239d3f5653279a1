//! Singular-value chaos diagnostics for sparse non-Hermitian SYK ensembles.

pub mod complexity;
pub mod ensemble;
pub mod error;
pub mod form_factor;
pub mod majorana;
pub mod numeric;
pub mod rmt;
pub mod sampler;
pub mod spacing;
pub mod spectral;

pub use error::{Error, Result};
