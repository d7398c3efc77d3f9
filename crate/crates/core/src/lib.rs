//! Multimodal camera-pose posteriors with a conditional variational
//! autoencoder.
//!
//! A decoder network maps standard-normal latent samples, conditioned on an
//! observation, to camera poses in SE(3); drawing many latents yields a
//! sample set from the pose posterior, which may have several modes when the
//! observation is ambiguous. The decoder is trained jointly with a pose
//! encoder by minimizing a β-weighted evidence lower bound.
//!
//! * [`geometry`]: poses, the 6D rotation representation, rotation distances
//!   and chordal averaging.
//! * [`autodiff`]: the reverse-mode engine, MLPs and AdamW.
//! * [`cvae`]: the model, the training objective and loop, posterior sampling.
//! * [`scenes`]: synthetic solid-color scenes with known posterior modes.
//! * [`eval`]: recall, point estimates, median errors, KDE marginals and
//!   mode coverage.

pub mod autodiff;
pub mod cvae;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod scenes;

pub use error::{Error, Result};
