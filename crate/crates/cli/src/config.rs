//! Run configuration: one flat TOML table with every experiment setting.

use std::path::{Path, PathBuf};

use pose_cvae::autodiff::OptimizerConfig;
use pose_cvae::cvae::TrainConfig;
use pose_cvae::eval::{RecallSpec, Threshold};
use pose_cvae::scenes::{default_palette, SceneOptions};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Independent seeds of the four random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// Scene build and observation noise.
    pub scene: u64,
    /// Weight initialization.
    pub init: u64,
    /// Minibatch order and training noise.
    pub train: u64,
    /// Posterior sampling during evaluation and sampling.
    pub eval: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pattern: Vec<String>,
    pub length: f64,
    pub segment_yaw_deg: Option<Vec<f64>>,
    pub obs_noise: f64,
    pub feature_dim: usize,
    pub n_train: usize,
    pub n_test: usize,

    pub latent_dim: usize,
    pub beta: f64,
    pub warmup_start: usize,
    pub warmup_length: usize,
    pub batch_size: usize,
    pub mc_samples: usize,
    pub lambda_r: f64,
    pub lambda_t: f64,
    pub iterations: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub fusion_width: usize,
    pub feature_width: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub precision: Precision,

    /// Pairs of (translation, rotation in degrees).
    pub thresholds: Vec<[f64; 2]>,
    pub gamma: f64,
    /// Posterior samples per query.
    pub samples: usize,

    pub scene_seed: u64,
    pub init_seed: u64,
    pub train_seed: u64,
    pub eval_seed: u64,

    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scene = SceneOptions::default();
        let train = TrainConfig::default();
        let recall = RecallSpec::default();
        RunConfig {
            pattern: scene.pattern,
            length: scene.length,
            segment_yaw_deg: scene.segment_yaw_deg,
            obs_noise: scene.obs_noise,
            feature_dim: scene.feature_dim,
            n_train: 300,
            n_test: 30,
            latent_dim: train.latent_dim,
            beta: train.beta,
            warmup_start: train.warmup_start,
            warmup_length: train.warmup_length,
            batch_size: train.batch_size,
            mc_samples: train.mc_samples,
            lambda_r: train.lambda_r,
            lambda_t: train.lambda_t,
            iterations: train.iterations,
            hidden_width: train.hidden_width,
            hidden_layers: train.hidden_layers,
            fusion_width: train.fusion_width,
            feature_width: train.feature_width,
            learning_rate: train.optimizer.learning_rate,
            weight_decay: train.optimizer.weight_decay,
            adam_beta1: train.optimizer.beta1,
            adam_beta2: train.optimizer.beta2,
            adam_epsilon: train.optimizer.epsilon,
            precision: Precision::F32,
            thresholds: recall
                .thresholds
                .iter()
                .map(|t| [t.translation, t.rotation_deg])
                .collect(),
            gamma: recall.gamma,
            samples: 1000,
            scene_seed: 0,
            init_seed: 0,
            train_seed: 0,
            eval_seed: 0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    /// Parses a TOML document; missing keys take their defaults.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies `key=value` overrides, with values in TOML syntax. Bare words
    /// that are not valid TOML are taken as strings.
    pub fn with_overrides(&self, overrides: &[String]) -> CliResult<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut table = toml::Table::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            scene: self.scene_seed,
            init: self.init_seed,
            train: self.train_seed,
            eval: self.eval_seed,
        }
    }

    pub fn scene_options(&self) -> SceneOptions {
        SceneOptions {
            pattern: self.pattern.clone(),
            palette: default_palette(),
            length: self.length,
            segment_yaw_deg: self.segment_yaw_deg.clone(),
            obs_noise: self.obs_noise,
            feature_dim: self.feature_dim,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            latent_dim: self.latent_dim,
            beta: self.beta,
            warmup_start: self.warmup_start,
            warmup_length: self.warmup_length,
            batch_size: self.batch_size,
            mc_samples: self.mc_samples,
            lambda_r: self.lambda_r,
            lambda_t: self.lambda_t,
            iterations: self.iterations,
            seed: self.train_seed,
            init_seed: self.init_seed,
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            fusion_width: self.fusion_width,
            feature_width: self.feature_width,
            optimizer: OptimizerConfig {
                learning_rate: self.learning_rate,
                weight_decay: self.weight_decay,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                epsilon: self.adam_epsilon,
            },
        }
    }

    pub fn recall_spec(&self) -> RecallSpec {
        RecallSpec {
            thresholds: self
                .thresholds
                .iter()
                .map(|&[t, r]| Threshold::new(t, r))
                .collect(),
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train_config().validate()?;
        self.recall_spec().validate()?;
        if self.n_train == 0 || self.n_test == 0 || self.samples == 0 {
            return Err(CliError::Config(
                "n_train, n_test and samples must be positive".into(),
            ));
        }
        Ok(())
    }

    /// One-line JSON form embedded in artifact headers.
    pub fn header_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::from_toml("iteratons = 5"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.segment_yaw_deg = Some(vec![0.0, 10.0, 20.0]);
        c.precision = Precision::F64;
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn overrides() {
        let c = RunConfig::default()
            .with_overrides(&[
                "iterations=12".into(),
                "pattern=[\"red\",\"blue\",\"green\"]".into(),
                "precision=f64".into(),
            ])
            .unwrap();
        assert_eq!(c.iterations, 12);
        assert_eq!(c.pattern, ["red", "blue", "green"]);
        assert_eq!(c.precision, Precision::F64);
        assert!(RunConfig::default().with_overrides(&["nokey".into()]).is_err());
        assert!(RunConfig::default().with_overrides(&["bogus=1".into()]).is_err());
    }

    #[test]
    fn defaults_mirror_library() {
        let c = RunConfig::default();
        assert_eq!(c.train_config(), TrainConfig::default());
        assert_eq!(c.recall_spec(), RecallSpec::default());
        assert_eq!(c.scene_options(), SceneOptions::default());
        c.validate().unwrap();
    }
}
