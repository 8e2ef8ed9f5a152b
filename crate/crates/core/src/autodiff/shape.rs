use super::graph::{Graph, Var};
use crate::error::{ensure_shape, Result};
use crate::tensor::{strides, Real, Tensor};

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub(crate) fn permute_data<T: Real>(data: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return out;
    }
    if rank == 0 {
        out.push(data[0]);
        return out;
    }
    let last = rank - 1;
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    loop {
        let step = src_strides[last];
        for j in 0..out_shape[last] {
            out.push(data[base + j * step]);
        }
        // advance the multi-index over all but the innermost axis
        let mut ax = last;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.record(out, &[x], |ctx| vec![Some(ctx.grad.to_vec())]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        ensure_shape!(
            axes.len() == shape.len()
                && axes.iter().all(|&a| a < shape.len() && !std::mem::replace(&mut seen[a], true)),
            "permute: {axes:?} is not a permutation of {} axes",
            shape.len()
        );
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let data = permute_data(self.value(x).data(), &shape, axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.record(out, &[x], move |ctx| {
            vec![Some(permute_data(ctx.grad, &out_shape, &inverse))]
        }))
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        ensure_shape!(!xs.is_empty(), "concat of nothing");
        let first = self.shape(xs[0]).to_vec();
        ensure_shape!(axis < first.len(), "concat: axis {axis} out of range");
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            ensure_shape!(
                s.len() == first.len()
                    && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b),
                "concat: {s:?} incompatible with {first:?} on axis {axis}"
            );
            widths.push(s[axis]);
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total: usize = widths.iter().sum();
        let mut shape = first.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &w) in xs.iter().zip(&widths) {
                let d = self.value(x).data();
                data.extend_from_slice(&d[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.record(out, xs, move |ctx| {
            let mut grads: Vec<Vec<T>> = widths
                .iter()
                .map(|&w| Vec::with_capacity(outer * w * inner))
                .collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (g, &w) in grads.iter_mut().zip(&widths) {
                    g.extend_from_slice(&ctx.grad[pos..pos + w * inner]);
                    pos += w * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        ensure_shape!(axis < shape.len(), "narrow: axis {axis} out of range");
        ensure_shape!(
            start + len <= shape[axis],
            "narrow: [{start}, {}) exceeds axis size {}",
            start + len,
            shape[axis]
        );
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let b = (o * full + start) * inner;
            data.extend_from_slice(&src[b..b + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        let n_in = src.len();
        Ok(self.record(out, &[x], move |ctx| {
            let mut g = vec![T::zero(); n_in];
            for o in 0..outer {
                let b = (o * full + start) * inner;
                g[b..b + len * inner]
                    .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(g)]
        }))
    }

    /// Sub-pixel rearrangement along the frame axis:
    /// `out[b, c, n, r*f + k] = in[b, c*r + k, n, f]`.
    pub fn subpixel_shuffle_f(&mut self, x: Var, r: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        ensure_shape!(shape.len() == 4, "subpixel shuffle needs [B, C, N, F], got {shape:?}");
        let [b, c, n, f] = [shape[0], shape[1], shape[2], shape[3]];
        ensure_shape!(r >= 1 && c % r == 0, "subpixel shuffle: {c} channels not divisible by {r}");
        let co = c / r;
        // [B, Co, r, N, F] -> [B, Co, N, F, r]
        let data = permute_data(self.value(x).data(), &[b, co, r, n, f], &[0, 1, 3, 4, 2]);
        let out = Tensor::new(&[b, co, n, f * r], data)?;
        Ok(self.record(out, &[x], move |ctx| {
            vec![Some(permute_data(ctx.grad, &[b, co, n, f, r], &[0, 1, 4, 2, 3]))]
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
    fn permute_transposes_a_matrix() {
        let d = permute_data(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3], &[1, 0]);
        assert_eq!(d, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn permute_then_inverse_is_identity() {
        let shape = [2, 3, 4, 5];
        let data: Vec<f64> = (0..120).map(|i| i as f64).collect();
        let p = permute_data(&data, &shape, &[2, 0, 3, 1]);
        let back = permute_data(&p, &[4, 2, 5, 3], &[1, 3, 0, 2]);
        assert_eq!(back, data);
    }

    #[test]
    fn subpixel_shuffle_interleaves_channels() {
        // channel0 = [a, b], channel1 = [c, d] -> [a, c, b, d]
        let mut g = graph();
        let x = g.input(Tensor::new(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
        let y = g.subpixel_shuffle_f(x, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 4]);
        assert_eq!(g.value(y).data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn subpixel_shuffle_identity_and_errors() {
        let mut g = graph();
        let x = g.input(Tensor::from_fn(&[1, 3, 2, 2], |i| i as f64), false);
        let y = g.subpixel_shuffle_f(x, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
        assert!(g.subpixel_shuffle_f(x, 2).is_err());
    }

    #[test]
    fn subpixel_shuffle_index_formula_holds() {
        let (b, c, n, f, r) = (2, 6, 3, 4, 3);
        let mut g = graph();
        let x = g.input(Tensor::from_fn(&[b, c, n, f], |i| i as f64), false);
        let y = g.subpixel_shuffle_f(x, r).unwrap();
        let (xi, yo) = (g.value(x).data(), g.value(y).data());
        for bi in 0..b {
            for ci in 0..c / r {
                for ni in 0..n {
                    for fi in 0..f {
                        for k in 0..r {
                            let o = ((bi * (c / r) + ci) * n + ni) * (f * r) + r * fi + k;
                            let s = ((bi * c + ci * r + k) * n + ni) * f + fi;
                            assert_eq!(yo[o], xi[s]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn concat_and_narrow_invert() {
        let mut g = graph();
        let a = g.input(Tensor::from_fn(&[2, 1, 3], |i| i as f64), false);
        let b = g.input(Tensor::from_fn(&[2, 2, 3], |i| 10.0 + i as f64), false);
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 3]);
        let a2 = g.narrow(c, 1, 0, 1).unwrap();
        let b2 = g.narrow(c, 1, 1, 2).unwrap();
        assert_eq!(g.value(a2), g.value(a));
        assert_eq!(g.value(b2), g.value(b));
    }
}
