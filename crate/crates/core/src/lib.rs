//! Saliency detection from neural response divergence.
//!
//! Pipeline: a sparsely connected convolutional block produces per-pixel
//! responses ([`neural`]), SLIC superpixels group pixels into elements
//! ([`segmentation`]), element means are clustered into sparse atoms
//! ([`atoms`]), atoms are compared pairwise ([`divergence`]) and the
//! size-weighted divergences are propagated back to pixels over several
//! clustering granularities ([`salience`]). [`evaluation`] holds the PR/AUC
//! and benchmarking harness.

pub mod atoms;
pub mod divergence;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod neural;
pub mod pipeline;
pub mod salience;
pub mod seed;
pub mod segmentation;
pub mod synthetic;

pub use error::{NerdError, Result};
