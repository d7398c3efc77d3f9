//! Self-describing JSON checkpoints.
//!
//! Parameter values are stored as decimal numbers that parse back to the
//! identical binary value, so a reloaded model reproduces the saved one's
//! outputs bit for bit.

use std::path::Path;

use pose_cvae::autodiff::{ParamStore, Real, Tensor};
use pose_cvae::cvae::{sample_posterior, Architecture, ModelParams, PosteriorSamples, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::{Precision, RunConfig, Seeds};
use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

/// A trained model in either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    F32(ModelParams<f32>),
    F64(ModelParams<f64>),
}

impl Model {
    pub fn init(arch: Architecture, seed: u64, precision: Precision) -> Self {
        match precision {
            Precision::F32 => Model::F32(ModelParams::init(arch, seed)),
            Precision::F64 => Model::F64(ModelParams::init(arch, seed)),
        }
    }

    pub fn arch(&self) -> &Architecture {
        match self {
            Model::F32(m) => m.arch(),
            Model::F64(m) => m.arch(),
        }
    }

    pub fn precision(&self) -> Precision {
        match self {
            Model::F32(_) => Precision::F32,
            Model::F64(_) => Precision::F64,
        }
    }

    pub fn sample(&self, features: &[f64], m: usize, seed: u64) -> pose_cvae::Result<PosteriorSamples> {
        match self {
            Model::F32(p) => sample_posterior(p, features, m, seed),
            Model::F64(p) => sample_posterior(p, features, m, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerShape {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedParam {
    pub name: String,
    pub shape: [usize; 2],
    pub decay: bool,
    /// Row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub precision: Precision,
    pub architecture: Architecture,
    pub layers: Vec<LayerShape>,
    pub params: Vec<SavedParam>,
    pub train_config: TrainConfig,
    pub final_iteration: usize,
    pub seeds: Seeds,
    pub config: RunConfig,
}

fn save_store<T: Real>(store: &ParamStore<T>) -> Vec<SavedParam> {
    store
        .entries()
        .iter()
        .map(|e| SavedParam {
            name: e.name.clone(),
            shape: e.value.shape(),
            decay: e.decay,
            values: e.value.values().iter().map(|v| v.as_f64()).collect(),
        })
        .collect()
}

fn load_store<T: Real>(params: &[SavedParam]) -> CliResult<ParamStore<T>> {
    let mut store = ParamStore::new();
    for p in params {
        let values = p.values.iter().map(|&v| T::of(v)).collect();
        let tensor = Tensor::from_vec(p.shape[0], p.shape[1], values)
            .map_err(|_| CliError::Checkpoint(format!("`{}` holds the wrong number of values", p.name)))?;
        store.insert(&p.name, tensor, p.decay);
    }
    Ok(store)
}

impl Checkpoint {
    pub fn new(model: &Model, config: &RunConfig, final_iteration: usize) -> Self {
        let arch = *model.arch();
        Checkpoint {
            format_version: FORMAT_VERSION,
            precision: model.precision(),
            architecture: arch,
            layers: arch
                .parameter_shapes()
                .into_iter()
                .map(|(name, shape)| LayerShape { name, shape })
                .collect(),
            params: match model {
                Model::F32(m) => save_store(m.store()),
                Model::F64(m) => save_store(m.store()),
            },
            train_config: config.train_config(),
            final_iteration,
            seeds: config.seeds(),
            config: config.clone(),
        }
    }

    pub fn model(&self) -> CliResult<Model> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let expected: Vec<LayerShape> = self
            .architecture
            .parameter_shapes()
            .into_iter()
            .map(|(name, shape)| LayerShape { name, shape })
            .collect();
        if expected != self.layers {
            return Err(pose_cvae::Error::ArchitectureMismatch(
                "layer table disagrees with the architecture".into(),
            )
            .into());
        }
        Ok(match self.precision {
            Precision::F32 => Model::F32(ModelParams::from_store(self.architecture, load_store(&self.params)?)?),
            Precision::F64 => Model::F64(ModelParams::from_store(self.architecture, load_store(&self.params)?)?),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }
}
