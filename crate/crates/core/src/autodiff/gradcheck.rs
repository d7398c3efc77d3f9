//! Central finite differences, always in 64-bit.

use super::{value_and_grad, Graph, ParamStore, Tensor, Var};
use crate::error::Result;

fn evaluate<F>(store: &ParamStore<f64>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let params = g.bind(store, false);
    let out = f(&mut g, &params)?;
    Ok(g.finish(out)?.get(0, 0))
}

/// `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h` for every scalar coordinate.
///
/// `f` must be deterministic: any noise it uses has to be drawn outside.
pub fn numeric_gradient<F>(store: &ParamStore<f64>, f: F, step: f64) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut probe = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for p in 0..store.len() {
        let [r, c] = store.value(p).shape();
        let mut grad = Tensor::zeros(r, c);
        for k in 0..r * c {
            let orig = store.value(p).values()[k];
            probe.value_mut(p).values_mut()[k] = orig + step;
            let plus = evaluate(&probe, &f)?;
            probe.value_mut(p).values_mut()[k] = orig - step;
            let minus = evaluate(&probe, &f)?;
            probe.value_mut(p).values_mut()[k] = orig;
            grad.values_mut()[k] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Largest coordinate-wise relative difference, using
/// `max(|analytic|, |numeric|, 1e-8)` as the denominator.
pub fn compare_gradients(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lists differ in length");
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| {
            assert_eq!(a.shape(), n.shape());
            a.values().iter().zip(n.values()).map(|(&a, &n)| {
                let denom = a.abs().max(n.abs()).max(1e-8);
                (a - n).abs() / denom
            })
        })
        .fold(0.0, f64::max)
}

/// Max relative error between reverse-mode and finite-difference gradients.
pub fn finite_difference_check<F>(store: &ParamStore<f64>, f: F, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (_, analytic) = value_and_grad(store, &f)?;
    let numeric = numeric_gradient(store, &f, step)?;
    Ok(compare_gradients(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Mlp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_function_is_exact() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(2, 3, vec![0.5, -1.0, 2.0, 3.0, 0.1, -0.7]).unwrap(), true);
        let err = finite_difference_check(
            &s,
            |g, p| {
                let c = g.constant(Tensor::from_vec(2, 3, vec![1.0, 2.0, -3.0, 0.5, 0.25, 4.0]).unwrap());
                let m = g.mul(p[0], c);
                Ok(g.sum(m))
            },
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn relu_away_from_kink() {
        let step = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let mlp = Mlp::init(&mut s, "m", &[3, 8, 2], false, &mut rng);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let input = Tensor::from_vec(4, 3, x).unwrap();

        // every pre-activation must sit well clear of the kink
        let mut g = Graph::new();
        let p = g.bind(&s, false);
        let xi = g.constant(input.clone());
        let pre = mlp.layers[0].forward(&mut g, &p, xi);
        let min_abs = g.value(pre).iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        assert!(min_abs > 10.0 * step, "seed puts a unit on the kink: {min_abs}");

        let err = finite_difference_check(
            &s,
            |g, p| {
                let xi = g.constant(input.clone());
                let y = mlp.forward(g, p, xi)?;
                let y2 = g.square(y);
                Ok(g.sum(y2))
            },
            step,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::from_vec(1, 3, vec![0.3, -1.5, 2.0]).unwrap(), true);
        let f = |g: &mut Graph<f64>, p: &[Var]| {
            let e = g.exp(p[0]);
            Ok(g.sum(e))
        };
        let (_, mut analytic) = value_and_grad(&s, f).unwrap();
        analytic[0].values_mut().iter_mut().for_each(|v| *v *= 2.0);
        let numeric = numeric_gradient(&s, f, 1e-5).unwrap();
        let err = compare_gradients(&analytic, &numeric);
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = ParamStore::new();
        let rand_t = |rng: &mut ChaCha8Rng, r, c| {
            Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(0.2..1.5)).collect()).unwrap()
        };
        s.insert("a", rand_t(&mut rng, 4, 3), true);
        s.insert("b", rand_t(&mut rng, 4, 3), true);
        s.insert("w", rand_t(&mut rng, 3, 6), true);
        s.insert("r", rand_t(&mut rng, 1, 6), true);
        let err = finite_difference_check(
            &s,
            |g, p| {
                let c = g.cross(p[0], p[1]);
                let n = g.normalize_rows(c);
                let ab = g.concat(&[n, p[1]]);
                let mm = g.matmul(p[0], p[2]);
                let sub = g.sub(mm, p[3]);
                let mul = g.mul(sub, ab);
                let cl = g.clamp(mul, -0.8, 0.9);
                let e = g.exp(cl);
                let l = g.ln(e);
                let sq = g.square(l);
                let sr = g.sum_rows(sq);
                let rn = g.row_norm(ab);
                let t = g.add(sr, rn);
                let cols = g.cols(ab, 1, 2);
                let rep = g.repeat_rows(t, 2);
                let fro = g.frobenius(cols);
                let sqrt = g.sqrt(rep);
                let m = g.mean(sqrt);
                let sum = g.add(m, fro);
                let shifted = g.add_scalar(sum, 3.0);
                let relu = g.relu(shifted);
                Ok(g.scale(relu, 0.5))
            },
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }
}
