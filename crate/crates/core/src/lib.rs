//! Attention-weighted set regression over bags of image patches.
//!
//! A bag of patches is encoded patch-by-patch, weighted by a
//! permutation-equivariant attention network, pooled into one vector and
//! mapped to a scalar target. An autoencoder branch reconstructs every patch
//! from its latent code so the latent space stays diverse.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
