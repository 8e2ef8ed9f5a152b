//! Central finite-difference gradient checking.
//!
//! The checked function maps inputs (and any parameters in a store) to a
//! tensor. It is reduced to a scalar through a fixed pseudo-random
//! projection so that gradients of normalized outputs (softmax rows, norm
//! layers) are not trivially zero. Numerical derivatives only ever run the
//! forward pass.

pub mod suite;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub step: f64,
    /// Relative error bound where the gradient magnitude exceeds `floor`.
    pub rel: f64,
    /// Absolute error bound below `floor`.
    pub abs: f64,
    pub floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            step: 1e-5,
            rel: 1e-4,
            abs: 1e-7,
            floor: 1e-6,
        }
    }
}

/// Which coordinates to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// A seeded random sample of this many coordinates over all inputs and parameters.
    Sample(usize),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub failures: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<24} {} checked={:<4} max_rel={:.3e} max_abs={:.3e}",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.checked,
            self.max_rel_err,
            self.max_abs_err
        )
    }
}

#[derive(Clone, Copy)]
enum Coord {
    Input(usize, usize),
    Param(usize, usize),
}

fn projection(len: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    Tensor::from_fn(&[len], |_| rng.random_range(-1.0..1.0))
}

fn evaluate<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], proj: Option<&Tensor<f64>>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::inference(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out).data();
    Ok(match proj {
        Some(p) => v.iter().zip(p.data()).map(|(a, b)| a * b).sum(),
        None => v[0],
    })
}

/// Compares reverse-mode gradients of `f` with central differences.
///
/// Scalar outputs are used as is; other outputs are projected onto a fixed
/// random direction.
pub fn check<F>(
    name: &str,
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    f: F,
    coverage: Coverage,
    tol: Tolerance,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    // analytic
    let mut grad_store = store.clone();
    grad_store.zero_grad();
    let mut g = Graph::new(&grad_store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    let out_len = g.value(out).len();
    let proj = (out_len != 1).then(|| projection(out_len, seed));
    let loss = match &proj {
        Some(p) => {
            let pv = g.constant(p.clone().reshape(g.shape(out))?);
            let prod = g.mul(out, pv)?;
            g.sum(prod)
        }
        None => out,
    };
    let grads = g.backward(loss, &mut grad_store)?;
    drop(g);

    let mut coords = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        coords.extend((0..t.len()).map(|k| Coord::Input(i, k)));
    }
    for id in store.ids() {
        coords.extend((0..store.value(id).len()).map(|k| Coord::Param(id.0, k)));
    }
    if let Coverage::Sample(n) = coverage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n.min(coords.len());
        let picked = sample(&mut rng, coords.len(), n);
        let mut idx: Vec<usize> = picked.into_iter().collect();
        idx.sort_unstable();
        coords = idx.into_iter().map(|i| coords[i]).collect();
    }

    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        failures: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for c in coords {
        let analytic = match c {
            Coord::Input(i, k) => grads.get(vars[i]).map_or(0.0, |g| g[k]),
            Coord::Param(p, k) => grad_store.grad(ids[p])[k],
        };
        let eval_at = |delta: f64| -> Result<f64> {
            match c {
                Coord::Input(i, k) => {
                    let mut xs = inputs.to_vec();
                    xs[i].data_mut()[k] += delta;
                    evaluate(store, &xs, proj.as_ref(), &f)
                }
                Coord::Param(p, k) => {
                    let mut s = store.clone();
                    s.value_mut(ids[p]).data_mut()[k] += delta;
                    evaluate(&s, inputs, proj.as_ref(), &f)
                }
            }
        };
        let numeric = (eval_at(tol.step)? - eval_at(-tol.step)?) / (2.0 * tol.step);
        let abs_err = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max(abs_err);
        if scale > tol.floor {
            let rel = abs_err / scale;
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel >= tol.rel {
                report.failures += 1;
            }
        } else if abs_err >= tol.abs {
            report.failures += 1;
        }
    }
    Ok(report)
}

/// Gradient check over input tensors only, every coordinate.
pub fn check_inputs<F>(name: &str, inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    check(name, &ParamStore::new(), inputs, f, Coverage::All, Tolerance::default(), 7)
}

/// Deterministic test tensor with entries in `[-1, 1)`.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_wrong_gradient() {
        // y = x^2 recorded with a deliberately wrong backward rule
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let report = check_inputs("wrong", &[x], |g, v| {
            let out = g.value(v[0]).map(|a| a * a);
            Ok(g.record(out, &[v[0]], |ctx| {
                vec![Some(ctx.inputs[0].data().iter().map(|&a| 3.0 * a).collect())]
            }))
        })
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn accepts_a_correct_gradient() {
        let x = random_tensor(&[2, 3], 1);
        let report = check_inputs("mul", &[x.clone(), x], |g, v| g.mul(v[0], v[1])).unwrap();
        assert!(report.passed(), "{report}");
    }
}
