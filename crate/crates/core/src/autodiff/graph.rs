use ndarray::{s, Array2, Axis, Zip};

use super::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};
use crate::geometry::ROT6_EPS;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    RowNorm(Var),
    Frobenius(Var),
    Cross(Var, Var),
    NormalizeRows(Var),
    Clamp(Var, T, T),
    Cols(Var, usize),
    Concat(Vec<Var>),
    RepeatRows(Var, usize),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumRows(_) => "sum_rows",
            Op::RowNorm(_) => "row_norm",
            Op::Frobenius(_) => "frobenius",
            Op::Cross(..) => "cross",
            Op::NormalizeRows(_) => "normalize_rows",
            Op::Clamp(..) => "clamp",
            Op::Cols(..) => "cols",
            Op::Concat(_) => "concat",
            Op::RepeatRows(..) => "repeat_rows",
        }
    }
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape of evaluated operations.
///
/// Operations evaluate eagerly. Numerical failures (a non-finite value, a
/// degenerate row normalization) do not abort the expression; the first one
/// is remembered and reported by [`Graph::backward`] and [`Graph::finish`].
/// Shape errors are programming errors and panic.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    error: Option<Error>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::with_capacity(128),
            error: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        let a = &self.nodes[v.0].value;
        [a.nrows(), a.ncols()]
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> T {
        let a = self.value(v);
        assert_eq!(a.len(), 1, "scalar() on a {:?} node", a.shape());
        a[(0, 0)]
    }

    pub fn error(&self) -> Option<&Error> {
        self.error.as_ref()
    }

    /// Value of `v`, or the first numerical failure recorded so far.
    pub fn finish(&self, v: Var) -> Result<Tensor<T>> {
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(Tensor::from_array(self.value(v).clone())),
        }
    }

    fn fail(&mut self, e: Error) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::Concat(vs) => vs.iter().any(|v| self.nodes[v.0].needs_grad),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Cross(a, b) => {
                self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
            }
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::RowNorm(a)
            | Op::Frobenius(a)
            | Op::NormalizeRows(a)
            | Op::Clamp(a, ..)
            | Op::Cols(a, _)
            | Op::RepeatRows(a, _) => self.nodes[a.0].needs_grad,
        };
        if self.error.is_none() && !value.iter().all(|x| x.is_finite()) {
            self.error = Some(Error::NonFiniteValue {
                op: op.name(),
                iteration: None,
            });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t.into_array(), Op::Constant)
    }

    pub fn constant_array(&mut self, a: Array2<T>) -> Var {
        self.push(a, Op::Constant)
    }

    pub fn constant_scalar(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf bound to parameter `index` of `store`. Gradients flow to it.
    pub fn param(&mut self, store: &ParamStore<T>, index: usize) -> Var {
        self.push(store.value(index).array().clone(), Op::Param(index))
    }

    /// Binds every parameter of `store`, in store order. With
    /// `track = false` they become constants (inference only).
    pub fn bind(&mut self, store: &ParamStore<T>, track: bool) -> Vec<Var> {
        (0..store.len())
            .map(|i| {
                if track {
                    self.param(store, i)
                } else {
                    self.push(store.value(i).array().clone(), Op::Constant)
                }
            })
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(
            x.ncols(),
            y.nrows(),
            "matmul {:?} x {:?}",
            x.shape(),
            y.shape()
        );
        let v = x.dot(y);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product with 2-D broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).mapv(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).mapv(|x| x + k);
        self.push(v, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(T::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(T::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(T::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = T::of(x.len() as f64);
        let v = Array2::from_elem((1, 1), x.sum() / n);
        self.push(v, Op::Mean(a))
    }

    /// Per-row sum: `N×k → N×1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumRows(a))
    }

    /// Per-row Euclidean norm: `N×k → N×1`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .map_axis(Axis(1), |r| r.iter().fold(T::zero(), |s, &x| s + x * x).sqrt())
            .insert_axis(Axis(1));
        self.push(v, Op::RowNorm(a))
    }

    /// Frobenius norm of the whole tensor: `→ 1×1`.
    pub fn frobenius(&mut self, a: Var) -> Var {
        let n = self.value(a).iter().fold(T::zero(), |s, &x| s + x * x).sqrt();
        self.push(Array2::from_elem((1, 1), n), Op::Frobenius(a))
    }

    /// Row-wise cross product of two `N×3` tensors.
    pub fn cross(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert!(x.ncols() == 3 && x.shape() == y.shape(), "cross needs matching N×3");
        let v = cross_rows(x, y);
        self.push(v, Op::Cross(a, b))
    }

    /// Scales each row to unit length.
    ///
    /// A row with norm at most `1e-8` records
    /// [`Error::DegenerateRotation6D`]: the only use of row normalization in
    /// this crate is Gram-Schmidt on 6D rotations.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        let mut worst: Option<f64> = None;
        for mut row in v.rows_mut() {
            let n = row.iter().fold(T::zero(), |s, &x| s + x * x).sqrt();
            if !(n.as_f64() > ROT6_EPS) {
                worst = Some(worst.map_or(n.as_f64(), |w: f64| w.min(n.as_f64())));
            }
            row.mapv_inplace(|x| x / n);
        }
        if let Some(norm) = worst {
            self.fail(Error::DegenerateRotation6D { norm });
        }
        self.push(v, Op::NormalizeRows(a))
    }

    /// Elementwise clamp; gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let v = self.value(a).mapv(|x| x.max(lo).min(hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Columns `start .. start + len`.
    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::Cols(a, start))
    }

    /// Horizontal concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat rows must agree");
        self.push(v, Op::Concat(parts.to_vec()))
    }

    /// Repeats every row `k` times consecutively: row `i` of the input
    /// becomes rows `i*k .. (i+1)*k` of the output.
    pub fn repeat_rows(&mut self, a: Var, k: usize) -> Var {
        let x = self.value(a);
        let mut v = Array2::zeros((x.nrows() * k, x.ncols()));
        for (i, row) in x.rows().into_iter().enumerate() {
            for j in 0..k {
                v.row_mut(i * k + j).assign(&row);
            }
        }
        self.push(v, Op::RepeatRows(a, k))
    }

    /// Reverse sweep from the `1×1` node `out`.
    ///
    /// Returns the output value and one gradient per parameter index of
    /// the store that was bound (zeros for parameters that were not used).
    pub fn backward(&self, out: Var, n_params: usize) -> Result<(T, Vec<Tensor<T>>)> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        let value = self.scalar(out);
        let mut grads: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Array2::from_elem((1, 1), T::one()));
        let mut param_grads: Vec<Option<Array2<T>>> = vec![None; n_params];

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => accumulate(&mut param_grads[*p], g),
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let negate = matches!(node.op, Op::Sub(..));
                    if self.nodes[b.0].needs_grad {
                        let mut gb = reduce_to(&g, self.value(*b));
                        if negate {
                            gb.mapv_inplace(|x| -x);
                        }
                        accumulate(&mut grads[b.0], gb);
                    }
                    if self.nodes[a.0].needs_grad {
                        let ga = reduce_to(&g, self.value(*a));
                        accumulate(&mut grads[a.0], ga);
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let ga = reduce_to(&(&g * self.value(*b)), self.value(*a));
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = reduce_to(&(&g * self.value(*a)), self.value(*b));
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads[a.0], g.mapv(|x| x * k));
                }
                Op::Offset(a) => accumulate(&mut grads[a.0], g),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|d, &x| {
                            if x <= T::zero() {
                                *d = T::zero();
                            }
                        });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Exp(a) => accumulate(&mut grads[a.0], g * &node.value),
                Op::Ln(a) => accumulate(&mut grads[a.0], g / self.value(*a)),
                Op::Square(a) => {
                    let two = T::of(2.0);
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d = *d * two * x);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sqrt(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| {
                        *d = if y > T::zero() {
                            *d / (T::of(2.0) * y)
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).raw_dim(), g[(0, 0)]);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let ga = Array2::from_elem(x.raw_dim(), g[(0, 0)] / T::of(x.len() as f64));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::SumRows(a) => {
                    let ga = g
                        .broadcast(self.value(*a).raw_dim())
                        .expect("N×1 broadcast")
                        .to_owned();
                    accumulate(&mut grads[a.0], ga);
                }
                Op::RowNorm(a) => {
                    let x = self.value(*a);
                    let mut ga = x.clone();
                    for ((mut row, n), d) in ga
                        .rows_mut()
                        .into_iter()
                        .zip(node.value.column(0))
                        .zip(g.column(0))
                    {
                        let f = if *n > T::zero() { *d / *n } else { T::zero() };
                        row.mapv_inplace(|x| x * f);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Frobenius(a) => {
                    let n = node.value[(0, 0)];
                    let f = if n > T::zero() {
                        g[(0, 0)] / n
                    } else {
                        T::zero()
                    };
                    accumulate(&mut grads[a.0], self.value(*a).mapv(|x| x * f));
                }
                Op::Cross(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads[a.0], cross_rows(self.value(*b), &g));
                    }
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut grads[b.0], cross_rows(&g, self.value(*a)));
                    }
                }
                Op::NormalizeRows(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut ga = g;
                    for ((mut d, xr), yr) in ga.rows_mut().into_iter().zip(x.rows()).zip(y.rows()) {
                        let n = xr.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
                        let dot = d.iter().zip(yr.iter()).fold(T::zero(), |s, (&p, &q)| s + p * q);
                        Zip::from(&mut d).and(&yr).for_each(|di, &yi| *di = (*di - yi * dot) / n);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        if x < lo || x > hi {
                            *d = T::zero();
                        }
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Cols(a, start) => {
                    let x = self.value(*a);
                    let mut ga = Array2::zeros(x.raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if self.nodes[p.0].needs_grad {
                            let gp = g.slice(s![.., offset..offset + w]).to_owned();
                            accumulate(&mut grads[p.0], gp);
                        }
                        offset += w;
                    }
                }
                Op::RepeatRows(a, k) => {
                    let x = self.value(*a);
                    let mut ga = Array2::zeros(x.raw_dim());
                    for (i, mut row) in ga.rows_mut().into_iter().enumerate() {
                        for j in 0..*k {
                            row += &g.row(i * k + j);
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
            }
        }

        // Parameters never reached come back as empty tensors.
        let result = param_grads
            .into_iter()
            .map(|g| g.map_or_else(|| Tensor::zeros(0, 0), Tensor::from_array))
            .collect();
        Ok((value, result))
    }
}

fn accumulate<T: Real>(slot: &mut Option<Array2<T>>, g: Array2<T>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

/// Sums a broadcast gradient back down to the operand's shape.
fn reduce_to<T: Real>(g: &Array2<T>, like: &Array2<T>) -> Array2<T> {
    let mut out = g.clone();
    if like.nrows() == 1 && g.nrows() != 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if like.ncols() == 1 && g.ncols() != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    out
}

fn cross_rows<T: Real>(x: &Array2<T>, y: &Array2<T>) -> Array2<T> {
    let mut v = Array2::zeros(x.raw_dim());
    for ((mut o, a), b) in v.rows_mut().into_iter().zip(x.rows()).zip(y.rows()) {
        o[0] = a[1] * b[2] - a[2] * b[1];
        o[1] = a[2] * b[0] - a[0] * b[2];
        o[2] = a[0] * b[1] - a[1] * b[0];
    }
    v
}

/// Evaluates `f` on a fresh graph with every parameter of `store` bound,
/// and returns the scalar result with its gradient per parameter.
///
/// Gradients come back in store order and with the parameters' shapes.
pub fn value_and_grad<T, F>(store: &ParamStore<T>, f: F) -> Result<(T, Vec<Tensor<T>>)>
where
    T: Real,
    F: FnOnce(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = g.bind(store, true);
    let out = f(&mut g, &vars)?;
    let (value, mut grads) = g.backward(out, store.len())?;
    for (i, gr) in grads.iter_mut().enumerate() {
        if gr.is_empty() {
            let [r, c] = store.value(i).shape();
            *gr = Tensor::zeros(r, c);
        }
    }
    Ok((value, grads))
}
