use super::graph::{Graph, Var};
use crate::error::{ensure_shape, Error, Result};
use crate::tensor::{Real, Tensor};

/// Normalizes `x` in place; returns `1 / sqrt(var + eps)` (biased variance).
fn standardize<T: Real>(x: &mut [T], eps: T) -> T {
    let n = T::usize(x.len());
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv = T::one() / (var + eps).sqrt();
    for v in x.iter_mut() {
        *v = (*v - mean) * inv;
    }
    inv
}

/// Gradient of standardization given the normalized values and `d/dxhat`.
fn standardize_backward<T: Real>(xhat: &[T], dxhat: &[T], inv: T, out: &mut [T]) {
    let n = T::usize(xhat.len());
    let s1: T = dxhat.iter().copied().sum();
    let s2: T = dxhat.iter().zip(xhat).map(|(&d, &h)| d * h).sum();
    for ((o, &d), &h) in out.iter_mut().zip(dxhat).zip(xhat) {
        *o = inv / n * (n * d - s1 - h * s2);
    }
}

impl<T: Real> Graph<T> {
    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        ensure_shape!(!shape.is_empty(), "layer_norm needs at least one axis");
        let d = *shape.last().unwrap();
        ensure_shape!(
            self.shape(gamma) == [d] && self.shape(beta) == [d],
            "layer_norm: affine params {:?}/{:?} do not match last dim {d}",
            self.shape(gamma),
            self.shape(beta)
        );
        let mut data = self.value(x).data().to_vec();
        {
            let (g, b) = (self.value(gamma).data(), self.value(beta).data());
            for row in data.chunks_mut(d) {
                standardize(row, eps);
                for ((v, &gv), &bv) in row.iter_mut().zip(g).zip(b) {
                    *v = *v * gv + bv;
                }
            }
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.record(out, &[x, gamma, beta], move |ctx| {
            let (x, g) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let mut gx = vec![T::zero(); x.len()];
            let mut gg = vec![T::zero(); d];
            let mut gb = vec![T::zero(); d];
            let mut xhat = vec![T::zero(); d];
            let mut dxhat = vec![T::zero(); d];
            for ((xr, gr), out) in x.chunks(d).zip(ctx.grad.chunks(d)).zip(gx.chunks_mut(d)) {
                xhat.copy_from_slice(xr);
                let inv = standardize(&mut xhat, eps);
                for j in 0..d {
                    dxhat[j] = gr[j] * g[j];
                    gg[j] += gr[j] * xhat[j];
                    gb[j] += gr[j];
                }
                standardize_backward(&xhat, &dxhat, inv, out);
            }
            vec![Some(gx), Some(gg), Some(gb)]
        }))
    }

    /// Group normalization of `[B, C, N, F]` over (channels in group, N, F)
    /// with per-channel affine.
    pub fn group_norm(
        &mut self,
        x: Var,
        groups: usize,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        ensure_shape!(shape.len() == 4, "group_norm needs [B, C, N, F], got {shape:?}");
        let c = shape[1];
        if groups == 0 || !c.is_multiple_of(groups) {
            return Err(Error::config(
                "groups",
                format!("{c} channels not divisible into {groups} groups"),
            ));
        }
        ensure_shape!(
            self.shape(gamma) == [c] && self.shape(beta) == [c],
            "group_norm: affine params must have {c} entries"
        );
        let plane = shape[2] * shape[3];
        let group_len = c / groups * plane;
        let mut data = self.value(x).data().to_vec();
        {
            let (g, b) = (self.value(gamma).data(), self.value(beta).data());
            for grp in data.chunks_mut(group_len) {
                standardize(grp, eps);
            }
            for (i, chunk) in data.chunks_mut(plane).enumerate() {
                let ch = i % c;
                chunk.iter_mut().for_each(|v| *v = *v * g[ch] + b[ch]);
            }
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.record(out, &[x, gamma, beta], move |ctx| {
            let (x, g) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let mut gx = vec![T::zero(); x.len()];
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            let mut xhat = vec![T::zero(); group_len];
            let mut dxhat = vec![T::zero(); group_len];
            let per_group = group_len / plane;
            for (gi, ((xr, gr), out)) in x
                .chunks(group_len)
                .zip(ctx.grad.chunks(group_len))
                .zip(gx.chunks_mut(group_len))
                .enumerate()
            {
                xhat.copy_from_slice(xr);
                let inv = standardize(&mut xhat, eps);
                for j in 0..group_len {
                    let ch = (gi * per_group + j / plane) % c;
                    dxhat[j] = gr[j] * g[ch];
                    gg[ch] += gr[j] * xhat[j];
                    gb[ch] += gr[j];
                }
                standardize_backward(&xhat, &dxhat, inv, out);
            }
            vec![Some(gx), Some(gg), Some(gb)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    fn graph() -> Graph<f64> {
        Graph::new(&ParamStore::new())
    }

    #[test]
    fn layer_norm_of_two_values() {
        let mut g = graph();
        let x = g.input(Tensor::new(&[2], vec![1.0, 3.0]).unwrap(), false);
        let gm = g.input(Tensor::ones(&[2]), false);
        let bt = g.input(Tensor::zeros(&[2]), false);
        let y = g.layer_norm(x, gm, bt, 0.0).unwrap();
        assert_eq!(g.value(y).data(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_input_yields_beta() {
        let mut g = graph();
        let x = g.input(Tensor::full(&[2, 3], 7.0), false);
        let gm = g.input(Tensor::full(&[3], 2.0), false);
        let bt = g.input(Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap(), false);
        let y = g.layer_norm(x, gm, bt, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);

        let x = g.input(Tensor::full(&[1, 3, 2, 2], -3.0), false);
        let y = g.group_norm(x, 1, gm, bt, 1e-5).unwrap();
        let v = g.value(y).data();
        for (i, &val) in v.iter().enumerate() {
            assert_eq!(val, [0.1, 0.2, 0.3][i / 4]);
        }
    }

    #[test]
    fn group_norm_with_c_groups_is_instance_norm() {
        let mut g = graph();
        let xt = Tensor::from_fn(&[2, 3, 2, 4], |i| ((i * 7919) % 13) as f64 - 6.0);
        let x = g.input(xt.clone(), false);
        let gm = g.input(Tensor::ones(&[3]), false);
        let bt = g.input(Tensor::zeros(&[3]), false);
        let y = g.group_norm(x, 3, gm, bt, 1e-5).unwrap();
        let out = g.value(y).data();
        for (plane_in, plane_out) in xt.data().chunks(8).zip(out.chunks(8)) {
            let mean = plane_in.iter().sum::<f64>() / 8.0;
            let var = plane_in.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            for (a, b) in plane_in.iter().zip(plane_out) {
                assert!(((a - mean) / (var + 1e-5).sqrt() - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn group_norm_rejects_indivisible_groups() {
        let mut g = graph();
        let x = g.input(Tensor::zeros(&[1, 3, 1, 1]), false);
        let gm = g.input(Tensor::ones(&[3]), false);
        let bt = g.input(Tensor::zeros(&[3]), false);
        assert!(matches!(g.group_norm(x, 2, gm, bt, 1e-5), Err(Error::Config { .. })));
    }
}
