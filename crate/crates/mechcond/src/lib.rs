//! Optimal linear conditioning of structurally damped and multimode
//! mechanical resonators from a continuous position measurement.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binio;
pub mod condition;
pub mod criteria;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod model;
pub mod quad;
pub mod simulate;
pub mod specfact;
pub mod spectrum;
pub mod wiener;

pub use error::{Error, Result};
pub use grid::{FrequencyGrid, C64};
pub use spectrum::SampledSpectrum;
