use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Affine layer `y = x·W + b` with `W: in×out`, `b: 1×out`, stored as two
/// parameters of a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Registers `{name}.weight` (Glorot-uniform) and `{name}.bias` (zero).
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<T> = (0..fan_in * fan_out)
            .map(|_| T::of(rng.random_range(-limit..limit)))
            .collect();
        let weight = store.insert(
            &format!("{name}.weight"),
            Tensor::from_vec(fan_in, fan_out, w).expect("sized above"),
            true,
        );
        let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(1, fan_out), false);
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Var {
        let h = g.matmul(x, params[self.weight]);
        g.add(h, params[self.bias])
    }
}

/// Stack of affine layers with ReLU between them.
///
/// The last layer is affine only unless `relu_last` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_last: bool,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`.
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        relu_last: bool,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers, relu_last }
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var> {
        let [_, width] = g.shape(x);
        if width != self.in_width() {
            return Err(Error::ShapeMismatch(format!(
                "MLP expects width {}, got {width}",
                self.in_width()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, params, h);
            if i < last || self.relu_last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

/// Inference-only forward pass of `mlp` on a batch of rows.
pub fn mlp_forward<T: Real>(store: &ParamStore<T>, mlp: &Mlp, input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let params = g.bind(store, false);
    let x = g.constant(input.clone());
    let y = mlp.forward(&mut g, &params, x)?;
    g.finish(y)
}
