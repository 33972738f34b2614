//! Superpatch masked-autoencoder pipeline for 3D CT volumes.
//!
//! Volumes are read and windowed into `[0, 1]` ([`volume_io`]), cut into
//! cubic superpatches and flattened voxel tokens ([`tokenizer`]), masked
//! with a deterministic two-stage sampler ([`masking`]) and reconstructed
//! by a transformer encoder–decoder ([`model`]) trained with
//! [`training`]. [`metrics`] scores reconstructions.

pub mod error;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod phantom;
pub mod rng;
pub mod tokenizer;
pub mod training;
pub mod volume_io;

pub use error::{Error, Result};
