use super::{Example, LatentGaussian, ModelParams, TrainConfig};
use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{rot6d_to_matrix, Pose, PoseVec9};

/// Clamp applied to the encoder's log-variance output.
pub const LOG_VARIANCE_RANGE: (f64, f64) = (-10.0, 10.0);

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σₖ (μₖ² + σₖ² − 1 − log σₖ²)`.
pub fn kl_standard_normal(q: &LatentGaussian) -> f64 {
    0.5 * q
        .mean
        .iter()
        .zip(&q.log_variance)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// `z = μ + exp(½ log σ²) ⊙ ε` for caller-supplied standard normal `ε`.
pub fn reparameterize(q: &LatentGaussian, noise: &[f64]) -> Vec<f64> {
    assert_eq!(noise.len(), q.dim(), "noise must match the latent dimension");
    q.mean
        .iter()
        .zip(&q.log_variance)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// `λr‖R̂ − R‖_F + λt‖t̂ − t‖₂` with `R̂` recovered from the 6D output.
pub fn reconstruction_loss(
    predicted: &PoseVec9,
    target: &Pose,
    lambda_r: f64,
    lambda_t: f64,
) -> Result<f64> {
    let r = rot6d_to_matrix(&predicted.rot6)?;
    let t = nalgebra::Vector3::from(predicted.trans);
    Ok(lambda_r * (r - target.rotation).norm() + lambda_t * (t - target.translation).norm())
}

/// Effective KL weight: zero before `warmup_start`, then a linear ramp
/// reaching `beta` after `warmup_length` iterations.
pub fn beta_schedule(iteration: usize, config: &TrainConfig) -> f64 {
    if iteration < config.warmup_start {
        return 0.0;
    }
    if config.warmup_length == 0 {
        return config.beta;
    }
    let progress = (iteration - config.warmup_start) as f64 / config.warmup_length as f64;
    config.beta * progress.min(1.0)
}

/// A minibatch laid out as tensors.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `B×F` observation features.
    pub obs: Tensor<T>,
    /// `B×9` encoder inputs.
    pub poses: Tensor<T>,
    /// `B×9` target rotations, column-major (`[c₀ c₁ c₂]`).
    pub rotations: Tensor<T>,
    /// `B×3` target translations.
    pub translations: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn new<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Result<Self> {
        let examples: Vec<&Example> = examples.into_iter().collect();
        let Some(first) = examples.first() else {
            return Err(Error::EmptySamples);
        };
        let b = examples.len();
        let f = first.features.len();
        let mut obs = Vec::with_capacity(b * f);
        let mut poses = Vec::with_capacity(b * 9);
        let mut rotations = Vec::with_capacity(b * 9);
        let mut translations = Vec::with_capacity(b * 3);
        for e in &examples {
            if e.features.len() != f {
                return Err(Error::ShapeMismatch("ragged observation features".into()));
            }
            obs.extend(e.features.iter().map(|&v| T::of(v)));
            poses.extend(e.pose.to_vec9().to_array().iter().map(|&v| T::of(v)));
            // nalgebra storage is column-major
            rotations.extend(e.pose.rotation.iter().map(|&v| T::of(v)));
            translations.extend(e.pose.translation.iter().map(|&v| T::of(v)));
        }
        Ok(Batch {
            obs: Tensor::from_vec(b, f, obs)?,
            poses: Tensor::from_vec(b, 9, poses)?,
            rotations: Tensor::from_vec(b, 9, rotations)?,
            translations: Tensor::from_vec(b, 3, translations)?,
        })
    }

    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.rows() == 0
    }
}

/// Graph nodes of the objective: the weighted total and its two parts
/// (batch means).
#[derive(Debug, Clone, Copy)]
pub struct ElboTerms {
    pub total: Var,
    pub kl: Var,
    pub reconstruction: Var,
}

/// Gram-Schmidt on each row of an `N×6` node, returning `N×9` column-major
/// rotation matrices.
fn rotation_rows<T: Real>(g: &mut Graph<T>, rot6: Var) -> Var {
    let a1 = g.cols(rot6, 0, 3);
    let a2 = g.cols(rot6, 3, 3);
    let b1 = g.normalize_rows(a1);
    let prod = g.mul(b1, a2);
    let dot = g.sum_rows(prod);
    let along = g.mul(b1, dot);
    let u = g.sub(a2, along);
    let b2 = g.normalize_rows(u);
    let b3 = g.cross(b1, b2);
    g.concat(&[b1, b2, b3])
}

/// Builds the objective for one batch.
///
/// `noise` holds `B·M` rows of `d` standard normal draws; rows
/// `i·M .. (i+1)·M` belong to batch element `i`.
#[allow(clippy::too_many_arguments)]
pub fn elbo_graph<T: Real>(
    model: &ModelParams<T>,
    g: &mut Graph<T>,
    p: &[Var],
    batch: &Batch<T>,
    noise: &Tensor<T>,
    beta: f64,
    lambda_r: f64,
    lambda_t: f64,
) -> Result<ElboTerms> {
    let b = batch.len();
    let d = model.arch().latent_dim;
    if noise.cols() != d || noise.rows() % b.max(1) != 0 || noise.rows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "noise {:?} for batch {b} and latent dim {d}",
            noise.shape()
        )));
    }
    let m = noise.rows() / b;

    let poses = g.constant(batch.poses.clone());
    let (mean, log_var) = model.encode_graph(g, p, poses)?;

    // ½ Σ (μ² + σ² − 1 − log σ²), per row, then batch mean
    let mu2 = g.square(mean);
    let var = g.exp(log_var);
    let s = g.add(mu2, var);
    let s = g.sub(s, log_var);
    let s = g.add_scalar(s, -T::one());
    let s = g.sum_rows(s);
    let s = g.scale(s, T::of(0.5));
    let kl = g.mean(s);

    let half = g.scale(log_var, T::of(0.5));
    let sd = g.exp(half);
    let sd = g.repeat_rows(sd, m);
    let mu = g.repeat_rows(mean, m);
    let eps = g.constant(noise.clone());
    let spread = g.mul(sd, eps);
    let z = g.add(mu, spread);

    let obs = g.constant(batch.obs.clone());
    let out = model.decode_graph(g, p, z, obs, m)?;
    let rot6 = g.cols(out, 0, 6);
    let trans = g.cols(out, 6, 3);
    let rot = rotation_rows(g, rot6);

    let target_r = g.constant(batch.rotations.clone());
    let target_r = g.repeat_rows(target_r, m);
    let target_t = g.constant(batch.translations.clone());
    let target_t = g.repeat_rows(target_t, m);
    let dr = g.sub(rot, target_r);
    let dr = g.row_norm(dr);
    let dt = g.sub(trans, target_t);
    let dt = g.row_norm(dt);
    let dr = g.scale(dr, T::of(lambda_r));
    let dt = g.scale(dt, T::of(lambda_t));
    let per_sample = g.add(dr, dt);
    let reconstruction = g.mean(per_sample);

    let weighted = g.scale(kl, T::of(beta));
    let total = g.add(weighted, reconstruction);
    Ok(ElboTerms {
        total,
        kl,
        reconstruction,
    })
}

/// Value of the objective on `examples` at `iteration`.
///
/// `noise` is row-major `B × M × d` with `M = config.mc_samples`.
pub fn elbo_loss<T: Real>(
    model: &ModelParams<T>,
    examples: &[Example],
    iteration: usize,
    config: &TrainConfig,
    noise: &[f64],
) -> Result<f64> {
    let batch = Batch::<T>::new(examples)?;
    let rows = examples.len() * config.mc_samples;
    let noise = Tensor::from_f64(rows, model.arch().latent_dim, noise)?;
    let mut g = Graph::new();
    let p = g.bind(model.store(), false);
    let terms = elbo_graph(
        model,
        &mut g,
        &p,
        &batch,
        &noise,
        beta_schedule(iteration, config),
        config.lambda_r,
        config.lambda_t,
    )?;
    Ok(g.finish(terms.total)?.get(0, 0).as_f64())
}
