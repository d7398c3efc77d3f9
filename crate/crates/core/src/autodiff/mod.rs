//! Reverse-mode differentiation over dense row-major matrices.
//!
//! Every value is a 2-D [`Tensor`]; batches are laid out one sample per row.
//! A [`Graph`] records operations as they are evaluated, and
//! [`Graph::backward`] walks the record in reverse to produce one gradient
//! per bound parameter. Matrix products are delegated to `ndarray`.
//!
//! ```
//! use pose_cvae::autodiff::{value_and_grad, ParamStore, Tensor};
//!
//! let mut store = ParamStore::<f64>::new();
//! store.insert("x", Tensor::scalar(3.0), false);
//! let (loss, grads) = value_and_grad(&store, |g, p| Ok(g.square(p[0]))).unwrap();
//! assert_eq!(loss, 9.0);
//! assert_eq!(grads[0].get(0, 0), 6.0);
//! ```

mod gradcheck;
mod graph;
mod mlp;
mod params;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::Float;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use gradcheck::{compare_gradients, finite_difference_check, numeric_gradient};
pub use graph::{value_and_grad, Graph, Var};
pub use mlp::{mlp_forward, Linear, Mlp};
pub use params::{adamw_step, OptimizerConfig, ParamEntry, ParamStore};

/// Floating point element type of tensors: `f32` or `f64`.
pub trait Real:
    LinalgScalar
    + ScalarOperand
    + Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
{
    const NAME: &'static str;

    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major matrix. Vectors are `1×n`, scalars `1×1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    data: Array2<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            data: Array2::zeros((rows, cols)),
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            data: Array2::from_elem((1, 1), v),
        }
    }

    pub fn row(values: &[T]) -> Self {
        Tensor {
            data: Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape"),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} tensor",
                values.len()
            )));
        }
        Ok(Tensor {
            data: Array2::from_shape_vec((rows, cols), values).expect("checked above"),
        })
    }

    pub fn from_f64(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::from_vec(rows, cols, values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn from_array(data: Array2<T>) -> Self {
        Tensor {
            data: data.as_standard_layout().into_owned(),
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.data.nrows(), self.data.ncols()]
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[(r, c)]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[(r, c)] = v;
    }

    /// Row-major view of the values.
    pub fn values(&self) -> &[T] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        self.data.as_slice_mut().expect("standard layout")
    }

    pub fn array(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_array(self) -> Array2<T> {
        self.data
    }

    pub fn row_f64(&self, r: usize) -> Vec<f64> {
        self.data.row(r).iter().map(|v| v.as_f64()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            data: self.data.mapv(|v| U::of(v.as_f64())),
        }
    }
}
