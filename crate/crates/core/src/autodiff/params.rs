use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// One named trainable tensor with its AdamW state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Whether decoupled weight decay applies (weights yes, biases no).
    pub decay: bool,
    first_moment: Tensor<T>,
    second_moment: Tensor<T>,
    step: u64,
}

impl<T: Real> ParamEntry<T> {
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Tensor<T> {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Tensor<T> {
        &self.second_moment
    }
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    /// Appends a parameter and returns its index.
    pub fn insert(&mut self, name: &str, value: Tensor<T>, decay: bool) -> usize {
        let [r, c] = value.shape();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            decay,
            first_moment: Tensor::zeros(r, c),
            second_moment: Tensor::zeros(r, c),
            step: 0,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, index: usize) -> &Tensor<T> {
        &self.entries[index].value
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.entries[index].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Same names and shapes, values converted to another precision.
    /// Optimizer state is reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.insert(&e.name, e.value.cast(), e.decay);
        }
        out
    }
}

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("optimizer: {self:?}")))
        }
    }
}

/// One AdamW update of every parameter in `params`.
///
/// Bias-corrected Adam step first, then the decoupled decay
/// `θ ← θ − lr·λ·θ` on parameters flagged for decay.
pub fn adamw_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    config: &OptimizerConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (e, g) in params.entries.iter().zip(grads) {
        if e.value.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {:?} for parameter `{}` {:?}",
                g.shape(),
                e.name,
                e.value.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteValue {
                op: "adamw_step",
                iteration: None,
            });
        }
    }

    let lr = T::of(config.learning_rate);
    let b1 = T::of(config.beta1);
    let b2 = T::of(config.beta2);
    let eps = T::of(config.epsilon);
    let one = T::one();
    for (e, g) in params.entries.iter_mut().zip(grads) {
        e.step += 1;
        let t = e.step as i32;
        let c1 = one - T::of(config.beta1.powi(t));
        let c2 = one - T::of(config.beta2.powi(t));
        let decay = if e.decay {
            T::of(config.learning_rate * config.weight_decay)
        } else {
            T::zero()
        };
        Zip::from(e.value.values_mut())
            .and(e.first_moment.values_mut())
            .and(e.second_moment.values_mut())
            .and(g.values())
            .for_each(|w, m, v, &g| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
                *w = *w - decay * *w;
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64, decay: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(v), decay);
        s
    }

    fn cfg(lr: f64, wd: f64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..Default::default()
        }
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = scalar_store(1.0, true);
        adamw_step(&mut s, &[Tensor::scalar(0.5)], &cfg(0.1, 0.0)).unwrap();
        let expect = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((s.value(0).get(0, 0) - expect).abs() < 1e-15);
        assert!((s.value(0).get(0, 0) - 0.9).abs() < 1e-7);
        assert_eq!(s.entries()[0].step(), 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = scalar_store(1.0, true);
        adamw_step(&mut s, &[Tensor::scalar(0.0)], &cfg(0.1, 0.0)).unwrap();
        assert_eq!(s.value(0).get(0, 0), 1.0);
    }

    #[test]
    fn decay_only_path() {
        let mut s = scalar_store(1.0, true);
        adamw_step(&mut s, &[Tensor::scalar(0.0)], &cfg(0.1, 0.01)).unwrap();
        assert!((s.value(0).get(0, 0) - 0.999).abs() < 1e-15);
        // biases are never decayed
        let mut b = scalar_store(1.0, false);
        adamw_step(&mut b, &[Tensor::scalar(0.0)], &cfg(0.1, 0.01)).unwrap();
        assert_eq!(b.value(0).get(0, 0), 1.0);
    }

    #[test]
    fn zero_betas_give_normalized_descent() {
        let c = OptimizerConfig {
            learning_rate: 0.05,
            weight_decay: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 1e-8,
        };
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap(), true);
        let mut before = s.value(0).values().to_vec();
        for g in [[0.3f64, -4.0, 1e-3], [-2.0, 0.1, 7.0]] {
            let gt = Tensor::from_vec(1, 3, g.to_vec()).unwrap();
            adamw_step(&mut s, &[gt], &c).unwrap();
            for i in 0..3 {
                let want = before[i] - 0.05 * g[i] / ((g[i] * g[i]).sqrt() + 1e-8);
                assert!((s.value(0).values()[i] - want).abs() < 1e-14);
            }
            before = s.value(0).values().to_vec();
        }
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut s = scalar_store(1.0, true);
        let err = adamw_step(&mut s, &[Tensor::scalar(f64::NAN)], &cfg(0.1, 0.0)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { .. }));
        let err = adamw_step(&mut s, &[Tensor::zeros(2, 2)], &cfg(0.1, 0.0)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
        assert_eq!(s.value(0).get(0, 0), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        assert!(cfg(0.0, 0.0).validate().is_err());
        assert!(OptimizerConfig {
            beta2: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
