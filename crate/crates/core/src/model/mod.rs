//! The joint model: a patch encoder, an equivariant attention network, a
//! pooling step with a linear predictor, and a patch decoder used only as a
//! reconstruction regulariser.
//!
//! The objective for one bag is
//! `total = (y − ŷ)² + λ1·L_g + λ2·Σ_j log(α_j + ε)`.

mod arch;
mod forward;
mod params;

pub use arch::{Architecture, ConvSpec};
pub use forward::{
    attention, decode_latent, encode_bag, encode_patch, equivariant_layer, forward_backward,
    forward_bag, pool, predict, regularizer_attention, BagGradient, BagOutput, BnUpdate,
};
pub use params::{ModelParams, ParamGroup, ParamStore};

use serde::{Deserialize, Serialize};

use crate::ops::{BnMode, PoolMode, ReconKind};
use crate::tensor::{Scalar, Tensor};

/// Latent codes of one bag, one row per patch.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSet<T: Scalar = f64>(pub Tensor<T>);

impl<T: Scalar> LatentSet<T> {
    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }
}

/// Attention weights for one bag, on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub weights: Vec<f64>,
    pub patch_ids: Vec<usize>,
    pub coordinates: Option<Vec<[usize; 3]>>,
}

impl AttentionMap {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Population standard deviation of the weights.
    pub fn std_dev(&self) -> f64 {
        let n = self.weights.len() as f64;
        let mean = self.weights.iter().sum::<f64>() / n;
        (self.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub discriminative: f64,
    pub generative: f64,
    pub attention_reg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 100.0,
            lambda2: 0.01,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub weights: LossWeights,
    pub pool: PoolMode,
    pub recon: ReconKind,
    pub bn_mode: BnMode,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            pool: PoolMode::Weighted,
            recon: ReconKind::Mse,
            bn_mode: BnMode::Eval,
        }
    }
}
