//! Conditional VAE over camera poses.
//!
//! The encoder maps a pose (as a [`PoseVec9`](crate::geometry::PoseVec9))
//! to a diagonal Gaussian over a `d`-dimensional latent space. The decoder
//! maps a latent sample together with observation features back to a pose.
//! Training minimizes, per batch element,
//!
//! ```text
//! β·KL(q(z|y) ‖ N(0, I)) + (1/M)·Σⱼ d_pose(decode(zⱼ, x), y),   zⱼ ~ q(z|y)
//! d_pose([R̂|t̂], [R|t]) = λr‖R̂ − R‖_F + λt‖t̂ − t‖₂
//! ```
//!
//! averaged over the batch, with β ramped in linearly after a delay. At
//! inference, latents drawn from the prior are decoded into a pose sample set.

mod model;
mod objective;
mod sample;
mod train;

use serde::{Deserialize, Serialize};

use crate::autodiff::OptimizerConfig;
use crate::error::{Error, Result};
use crate::geometry::Pose;

pub use model::{decode, decode_batch, encode, Architecture, FeatureExtractor, ModelParams};
pub use objective::{
    beta_schedule, elbo_graph, elbo_loss, kl_standard_normal, reconstruction_loss,
    reparameterize, Batch, ElboTerms, LOG_VARIANCE_RANGE,
};
pub use sample::{sample_posterior, PosteriorSamples, MAX_DEGENERATE_FRACTION};
pub use train::{train, train_from, LossRecord};

/// One training pair: observation features and the camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub pose: Pose,
}

/// Diagonal Gaussian `N(μ, diag(exp(log σ²)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl LatentGaussian {
    pub fn standard(dim: usize) -> Self {
        LatentGaussian {
            mean: vec![0.0; dim],
            log_variance: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Hyperparameters of the model and of training.
///
/// Defaults follow the reference recipe: `d = 4`, `β = 0.3` ramped in over
/// 4000 iterations starting at iteration 1000, batch 16, AdamW with
/// learning rate `1e-4` and decoupled decay `1e-3`, five hidden layers of
/// 128 units in both networks and a fusion width of 64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub beta: f64,
    pub warmup_start: usize,
    pub warmup_length: usize,
    pub batch_size: usize,
    /// Monte Carlo reconstructions per pose (`|Z_i|`).
    pub mc_samples: usize,
    pub lambda_r: f64,
    pub lambda_t: f64,
    pub iterations: usize,
    /// Seed of minibatch order and latent noise.
    pub seed: u64,
    /// Seed of the weight initialization.
    pub init_seed: u64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub fusion_width: usize,
    /// Width of the dense feature extractor; 0 feeds raw features.
    pub feature_width: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: 4,
            beta: 0.3,
            warmup_start: 1000,
            warmup_length: 4000,
            batch_size: 16,
            mc_samples: 64,
            lambda_r: 1.0,
            lambda_t: 1.0,
            iterations: 20_000,
            seed: 0,
            init_seed: 0,
            hidden_width: 128,
            hidden_layers: 5,
            fusion_width: 64,
            feature_width: 32,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if self.batch_size == 0 || self.mc_samples == 0 {
            return bad("batch_size and mc_samples must be positive");
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 || self.fusion_width == 0 {
            return bad("network widths and depth must be positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and non-negative");
        }
        if !(self.lambda_r > 0.0 && self.lambda_t > 0.0) {
            return bad("lambda_r and lambda_t must be positive");
        }
        self.optimizer.validate()
    }

    pub fn architecture(&self, obs_dim: usize) -> Architecture {
        Architecture {
            latent_dim: self.latent_dim,
            obs_dim,
            extractor: if self.feature_width == 0 {
                FeatureExtractor::Identity
            } else {
                FeatureExtractor::Dense {
                    width: self.feature_width,
                }
            },
            fusion_width: self.fusion_width,
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
        }
    }
}
