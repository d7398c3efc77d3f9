use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::objective::{beta_schedule, elbo_graph, Batch};
use super::{Example, ModelParams, TrainConfig};
use crate::autodiff::{adamw_step, Graph, Real, Tensor};
use crate::error::{Error, Result};

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub beta: f64,
    pub kl: f64,
    pub reconstruction: f64,
    pub total: f64,
}

/// Trains a freshly initialized model (seed `config.init_seed`) for
/// `config.iterations` minibatch AdamW steps.
pub fn train<T: Real>(
    examples: &[Example],
    config: &TrainConfig,
) -> Result<(ModelParams<T>, Vec<LossRecord>)> {
    let obs_dim = examples.first().ok_or(Error::EmptySamples)?.features.len();
    let model = ModelParams::init(config.architecture(obs_dim), config.init_seed);
    train_from(model, examples, config, |_| {})
}

/// Trains `model` in place of a fresh initialization. `on_step` sees every
/// log record as it is produced.
///
/// Minibatches are drawn by reshuffling the examples each epoch; shuffles
/// and latent noise both come from a generator seeded with `config.seed`,
/// so a run is bitwise reproducible.
pub fn train_from<T: Real>(
    mut model: ModelParams<T>,
    examples: &[Example],
    config: &TrainConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<(ModelParams<T>, Vec<LossRecord>)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if examples.iter().any(|e| e.features.len() != model.arch().obs_dim) {
        return Err(Error::ShapeMismatch(format!(
            "examples must carry {} observation features",
            model.arch().obs_dim
        )));
    }
    let d = model.arch().latent_dim;
    let m = config.mc_samples;
    let b = config.batch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut log = Vec::with_capacity(config.iterations);
    let mut picked = Vec::with_capacity(b);
    let mut noise = Tensor::<T>::zeros(b * m, d);

    for it in 0..config.iterations {
        picked.clear();
        while picked.len() < b {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(&examples[order[cursor]]);
            cursor += 1;
        }
        let batch = Batch::<T>::new(picked.iter().copied())?;
        for v in noise.values_mut() {
            *v = T::of(rng.sample::<f64, _>(StandardNormal));
        }
        let beta = beta_schedule(it, config);

        let mut g = Graph::new();
        let p = g.bind(model.store(), true);
        let terms = elbo_graph(
            &model,
            &mut g,
            &p,
            &batch,
            &noise,
            beta,
            config.lambda_r,
            config.lambda_t,
        )
        .map_err(|e| e.at_iteration(it))?;
        let (total, grads) = g
            .backward(terms.total, p.len())
            .map_err(|e| e.at_iteration(it))?;
        let record = LossRecord {
            iteration: it,
            beta,
            kl: g.scalar(terms.kl).as_f64(),
            reconstruction: g.scalar(terms.reconstruction).as_f64(),
            total: total.as_f64(),
        };
        drop(g);
        let grads: Vec<Tensor<T>> = grads
            .into_iter()
            .enumerate()
            .map(|(i, gr)| {
                if gr.is_empty() {
                    let [r, c] = model.store().value(i).shape();
                    Tensor::zeros(r, c)
                } else {
                    gr
                }
            })
            .collect();
        adamw_step(model.store_mut(), &grads, &config.optimizer).map_err(|e| e.at_iteration(it))?;
        on_step(&record);
        log.push(record);
    }
    Ok((model, log))
}
