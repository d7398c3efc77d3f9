use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::LOG_VARIANCE_RANGE;
use super::LatentGaussian;
use crate::autodiff::{Graph, Mlp, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::PoseVec9;

/// Maps raw observation features to the decoder's conditioning features.
///
/// Stands in for an image backbone. Solid-color observations carry no
/// spatial structure, so a single dense layer (or nothing) is enough.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureExtractor {
    Identity,
    /// Affine layer followed by ReLU.
    Dense { width: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub extractor: FeatureExtractor,
    pub fusion_width: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Architecture {
    pub fn feature_dim(&self) -> usize {
        match self.extractor {
            FeatureExtractor::Identity => self.obs_dim,
            FeatureExtractor::Dense { width } => width,
        }
    }

    fn hidden(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        w.push(output);
        w
    }

    /// Name and shape of every parameter, in store order.
    pub fn parameter_shapes(&self) -> Vec<(String, [usize; 2])> {
        ModelParams::<f32>::init(*self, 0)
            .store
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.value.shape()))
            .collect()
    }
}

/// All trainable weights: encoder, feature extractor and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    arch: Architecture,
    store: ParamStore<T>,
    encoder: Mlp,
    extractor: Option<Mlp>,
    obs_proj: Mlp,
    latent_proj: Mlp,
    trunk: Mlp,
}

impl<T: Real> ModelParams<T> {
    /// Glorot-uniform weights and zero biases, from `seed`.
    ///
    /// Encoder: `9 → hidden×layers → 2d`. Decoder: features and latent are
    /// each projected to `fusion_width` (+ReLU) and summed, then
    /// `fusion → hidden×layers → 9`.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Mlp::init(
            &mut store,
            "encoder",
            &arch.hidden(9, 2 * arch.latent_dim),
            false,
            &mut rng,
        );
        let extractor = match arch.extractor {
            FeatureExtractor::Identity => None,
            FeatureExtractor::Dense { width } => Some(Mlp::init(
                &mut store,
                "extractor",
                &[arch.obs_dim, width],
                true,
                &mut rng,
            )),
        };
        let obs_proj = Mlp::init(
            &mut store,
            "decoder.obs_proj",
            &[arch.feature_dim(), arch.fusion_width],
            true,
            &mut rng,
        );
        let latent_proj = Mlp::init(
            &mut store,
            "decoder.latent_proj",
            &[arch.latent_dim, arch.fusion_width],
            true,
            &mut rng,
        );
        let trunk = Mlp::init(
            &mut store,
            "decoder.trunk",
            &arch.hidden(arch.fusion_width, 9),
            false,
            &mut rng,
        );
        ModelParams {
            arch,
            store,
            encoder,
            extractor,
            obs_proj,
            latent_proj,
            trunk,
        }
    }

    /// Adopts externally supplied weights after checking every name and
    /// shape against `arch`.
    pub fn from_store(arch: Architecture, store: ParamStore<T>) -> Result<Self> {
        let mut model = Self::init(arch, 0);
        let expected = model.store.entries();
        if expected.len() != store.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                store.len()
            )));
        }
        for (want, got) in expected.iter().zip(store.entries()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::ArchitectureMismatch(format!(
                    "expected `{}` {:?}, found `{}` {:?}",
                    want.name,
                    want.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        model.store = store;
        Ok(model)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore<T> {
        self.store
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    /// Copy in another precision (optimizer state is dropped).
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch,
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            extractor: self.extractor.clone(),
            obs_proj: self.obs_proj.clone(),
            latent_proj: self.latent_proj.clone(),
            trunk: self.trunk.clone(),
        }
    }

    /// Encoder on a `B×9` batch of poses: returns `(μ, log σ²)`, each `B×d`,
    /// with the log-variance clamped to [`LOG_VARIANCE_RANGE`].
    pub fn encode_graph(&self, g: &mut Graph<T>, p: &[Var], poses: Var) -> Result<(Var, Var)> {
        let d = self.arch.latent_dim;
        let h = self.encoder.forward(g, p, poses)?;
        let mean = g.cols(h, 0, d);
        let raw = g.cols(h, d, d);
        let (lo, hi) = LOG_VARIANCE_RANGE;
        let log_var = g.clamp(raw, T::of(lo), T::of(hi));
        Ok((mean, log_var))
    }

    /// Decoder on `N×d` latents and `B×F` observations, where every
    /// observation row conditions `repeat` consecutive latent rows
    /// (`N = B·repeat`). Returns the raw `N×9` output.
    pub fn decode_graph(
        &self,
        g: &mut Graph<T>,
        p: &[Var],
        z: Var,
        obs: Var,
        repeat: usize,
    ) -> Result<Var> {
        let [n, _] = g.shape(z);
        let [b, _] = g.shape(obs);
        if n != b * repeat {
            return Err(Error::ShapeMismatch(format!(
                "{n} latent rows for {b} observations x {repeat}"
            )));
        }
        let feats = match &self.extractor {
            Some(e) => e.forward(g, p, obs)?,
            None => {
                if g.shape(obs)[1] != self.arch.obs_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "observation width {} != {}",
                        g.shape(obs)[1],
                        self.arch.obs_dim
                    )));
                }
                obs
            }
        };
        let mut fo = self.obs_proj.forward(g, p, feats)?;
        if repeat > 1 {
            fo = g.repeat_rows(fo, repeat);
        }
        let fz = self.latent_proj.forward(g, p, z)?;
        let fused = g.add(fo, fz);
        self.trunk.forward(g, p, fused)
    }
}

/// Latent posterior `q(z | pose)` predicted by the encoder.
pub fn encode<T: Real>(model: &ModelParams<T>, pose: &PoseVec9) -> Result<LatentGaussian> {
    let mut g = Graph::new();
    let p = g.bind(&model.store, false);
    let x = g.constant(Tensor::from_f64(1, 9, &pose.to_array())?);
    let (mean, log_var) = model.encode_graph(&mut g, &p, x)?;
    let mean = g.finish(mean)?;
    let log_var = g.finish(log_var)?;
    Ok(LatentGaussian {
        mean: mean.row_f64(0),
        log_variance: log_var.row_f64(0),
    })
}

/// Decoder output for a batch of latents (`N×d`) under one observation.
pub fn decode_batch<T: Real>(
    model: &ModelParams<T>,
    z: &Tensor<T>,
    features: &[f64],
) -> Result<Tensor<T>> {
    if z.cols() != model.arch.latent_dim {
        return Err(Error::ShapeMismatch(format!(
            "latent width {} != {}",
            z.cols(),
            model.arch.latent_dim
        )));
    }
    if features.len() != model.arch.obs_dim {
        return Err(Error::ShapeMismatch(format!(
            "observation width {} != {}",
            features.len(),
            model.arch.obs_dim
        )));
    }
    let mut g = Graph::new();
    let p = g.bind(&model.store, false);
    let zv = g.constant(z.clone());
    let obs = g.constant(Tensor::from_f64(1, features.len(), features)?);
    let y = model.decode_graph(&mut g, &p, zv, obs, z.rows())?;
    g.finish(y)
}

/// Raw 9-vector pose for one latent and observation. The rotation part may
/// still be degenerate; convert with [`PoseVec9::to_pose`].
pub fn decode<T: Real>(model: &ModelParams<T>, z: &[f64], features: &[f64]) -> Result<PoseVec9> {
    let zt = Tensor::from_f64(1, z.len(), z)?;
    let out = decode_batch(model, &zt, features)?;
    Ok(PoseVec9::from_slice(&out.row_f64(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;

    fn tiny_arch() -> Architecture {
        Architecture {
            latent_dim: 2,
            obs_dim: 3,
            extractor: FeatureExtractor::Dense { width: 4 },
            fusion_width: 5,
            hidden_width: 6,
            hidden_layers: 2,
        }
    }

    fn zeroed(mut m: ModelParams<f64>) -> ModelParams<f64> {
        for i in 0..m.store.len() {
            m.store.value_mut(i).values_mut().fill(0.0);
        }
        m
    }

    /// Dense layer on plain vectors: `relu(x·W + b)` when `relu`.
    fn dense(store: &ParamStore<f64>, w: usize, b: usize, x: &[f64], relu: bool) -> Vec<f64> {
        let wt = store.value(w);
        let bt = store.value(b);
        (0..wt.cols())
            .map(|j| {
                let v = bt.get(0, j) + x.iter().enumerate().map(|(i, xi)| xi * wt.get(i, j)).sum::<f64>();
                if relu {
                    v.max(0.0)
                } else {
                    v
                }
            })
            .collect()
    }

    fn mlp_oracle(store: &ParamStore<f64>, mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = mlp.layers.len() - 1;
        for (i, l) in mlp.layers.iter().enumerate() {
            h = dense(store, l.weight, l.bias, &h, i < last || mlp.relu_last);
        }
        h
    }

    #[test]
    fn default_layout_matches_reference_widths() {
        let arch = crate::cvae::TrainConfig::default().architecture(3);
        let shapes = arch.parameter_shapes();
        let get = |n: &str| shapes.iter().find(|(s, _)| s == n).unwrap().1;
        assert_eq!(get("encoder.0.weight"), [9, 128]);
        assert_eq!(get("encoder.4.weight"), [128, 128]);
        assert_eq!(get("encoder.5.weight"), [128, 8]);
        assert_eq!(get("decoder.obs_proj.0.weight"), [32, 64]);
        assert_eq!(get("decoder.latent_proj.0.weight"), [4, 64]);
        assert_eq!(get("decoder.trunk.0.weight"), [64, 128]);
        assert_eq!(get("decoder.trunk.5.weight"), [128, 9]);
        assert_eq!(shapes.len(), 2 * (6 + 1 + 1 + 1 + 6));
    }

    #[test]
    fn zero_network_encodes_to_prior() {
        let m = zeroed(ModelParams::init(tiny_arch(), 1));
        let q = encode(&m, &Pose::identity().to_vec9()).unwrap();
        assert_eq!(q, LatentGaussian::standard(2));
    }

    #[test]
    fn zero_network_decodes_degenerate_rotation() {
        let m = zeroed(ModelParams::init(tiny_arch(), 1));
        let y = decode(&m, &[0.3, -0.2], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(y.to_array(), [0.0; 9]);
        assert!(matches!(y.to_pose(), Err(Error::DegenerateRotation6D { .. })));
    }

    #[test]
    fn encode_matches_matrix_oracle() {
        let m = ModelParams::<f64>::init(tiny_arch(), 5);
        let pose = Pose::new(
            crate::geometry::rotation_about(nalgebra::Vector3::new(0.2, 1.0, -0.3), 50.0),
            nalgebra::Vector3::new(0.5, -1.0, 2.0),
        );
        let x = pose.to_vec9().to_array();
        let q = encode(&m, &PoseVec9::from_slice(&x)).unwrap();
        let h = mlp_oracle(&m.store, &m.encoder, &x);
        for k in 0..2 {
            assert!((q.mean[k] - h[k]).abs() <= 1e-12);
            assert!((q.log_variance[k] - h[2 + k].clamp(-10.0, 10.0)).abs() <= 1e-12);
        }
        let other = encode(&m, &Pose::identity().to_vec9()).unwrap();
        assert_ne!(q, other);
    }

    #[test]
    fn decode_matches_matrix_oracle() {
        let m = ModelParams::<f64>::init(tiny_arch(), 9);
        let z = [0.7, -1.3];
        let x = [0.9, 0.1, 0.05];
        let y = decode(&m, &z, &x).unwrap();
        let feats = mlp_oracle(&m.store, m.extractor.as_ref().unwrap(), &x);
        let fo = mlp_oracle(&m.store, &m.obs_proj, &feats);
        let fz = mlp_oracle(&m.store, &m.latent_proj, &z);
        let fused: Vec<f64> = fo.iter().zip(&fz).map(|(a, b)| a + b).collect();
        let want = mlp_oracle(&m.store, &m.trunk, &fused);
        for (a, b) in y.to_array().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn from_store_checks_layout() {
        let m = ModelParams::<f64>::init(tiny_arch(), 2);
        let store = m.store().clone();
        assert!(ModelParams::from_store(tiny_arch(), store.clone()).is_ok());
        let mut other = tiny_arch();
        other.hidden_width = 7;
        assert!(matches!(
            ModelParams::from_store(other, store),
            Err(Error::ArchitectureMismatch(_))
        ));
    }

    #[test]
    fn decode_rejects_wrong_widths() {
        let m = ModelParams::<f64>::init(tiny_arch(), 2);
        assert!(matches!(decode(&m, &[0.0; 3], &[1.0, 0.0, 0.0]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(decode(&m, &[0.0; 2], &[1.0, 0.0]), Err(Error::ShapeMismatch(_))));
    }
}
