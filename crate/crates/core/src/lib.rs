//! Dirichlet-process Gaussian mixture regularization for multimodal learning.
//!
//! Each modality is embedded into a shared latent space; the embeddings are
//! modelled by a truncated stick-breaking mixture of `M·K` diagonal Gaussians.
//! The mixture acts as a regularizer on the embeddings and as a sampler that
//! fills in missing modalities with a differentiable draw.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod grad;
pub mod math;
pub mod metrics;
pub mod mixture;
pub mod model;
pub mod rng;
pub mod stick;

pub use error::{DpmmError, Result};
