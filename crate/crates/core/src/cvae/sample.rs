use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::model::decode_batch;
use super::ModelParams;
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{rot6d_to_matrix, Pose};

/// Tolerated share of degenerate rotation outputs, relative to the number
/// of samples requested.
pub const MAX_DEGENERATE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub poses: Vec<Pose>,
    /// Latent draws whose decoded rotation was degenerate and were redrawn.
    pub degenerate: usize,
}

fn draw_latents<T: Real>(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Tensor<T> {
    let mut z = Tensor::zeros(rows, d);
    for v in z.values_mut() {
        *v = T::of(rng.sample::<f64, _>(StandardNormal));
    }
    z
}

fn to_pose(row: &[f64]) -> Option<Pose> {
    let mut rot6 = [0.0; 6];
    rot6.copy_from_slice(&row[..6]);
    let r = rot6d_to_matrix(&rot6).ok()?;
    Some(Pose::new(r, nalgebra::Vector3::new(row[6], row[7], row[8])))
}

/// Draws `m` poses from the model's posterior for one observation.
///
/// Latents are i.i.d. standard normal from a generator seeded with `seed`.
/// A latent whose decoded rotation cannot be orthonormalized is redrawn;
/// once more than 1% of `m` draws have been degenerate the model is deemed
/// broken and [`Error::ExcessiveDegeneracy`] is returned.
pub fn sample_posterior<T: Real>(
    model: &ModelParams<T>,
    features: &[f64],
    m: usize,
    seed: u64,
) -> Result<PosteriorSamples> {
    if m == 0 {
        return Err(Error::EmptySamples);
    }
    let d = model.arch().latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poses: Vec<Option<Pose>> = vec![None; m];
    let mut pending: Vec<usize> = (0..m).collect();
    let mut degenerate = 0;
    let budget = MAX_DEGENERATE_FRACTION * m as f64;

    while !pending.is_empty() {
        let z = draw_latents::<T>(&mut rng, pending.len(), d);
        let out = decode_batch(model, &z, features)?;
        let mut still = Vec::new();
        for (row, &slot) in pending.iter().enumerate() {
            match to_pose(&out.row_f64(row)) {
                Some(p) => poses[slot] = Some(p),
                None => still.push(slot),
            }
        }
        degenerate += still.len();
        if degenerate as f64 > budget {
            return Err(Error::ExcessiveDegeneracy {
                degenerate,
                drawn: m + degenerate,
            });
        }
        pending = still;
    }
    Ok(PosteriorSamples {
        poses: poses.into_iter().map(|p| p.expect("filled")).collect(),
        degenerate,
    })
}
