//! Reconstruction of deep limit order book volumes from trades and quotes.
//!
//! The pipeline runs LOBSTER files through [`lobster`] into trade-time
//! records, clips and standardizes them in [`preprocess`], encodes windows
//! in [`encoding`], and fits the ensemble of [`model`] with [`train`].
//! [`synth`] generates seeded markets in the same file format and [`trend`]
//! hosts the mid-price direction task.

pub mod encoding;
pub mod error;
pub mod experiments;
pub mod lobster;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod train;
pub mod trend;
pub mod types;

pub use error::{Error, ErrorClass, Result};
