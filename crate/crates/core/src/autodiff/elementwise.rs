use super::graph::{Graph, Var};
use super::kernels::sigmoid;
use crate::error::{ensure_shape, Result};
use crate::tensor::{Real, Tensor};

impl<T: Real> Graph<T> {
    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        ensure_shape!(
            self.shape(a) == self.shape(b),
            "{op}: shapes {:?} and {:?} differ",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.record(out, &[a, b], |ctx| {
            vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())]
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p - q).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.record(out, &[a, b], |ctx| {
            vec![
                Some(ctx.grad.to_vec()),
                Some(ctx.grad.iter().map(|&g| -g).collect()),
            ]
        }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.record(out, &[a, b], |ctx| {
            let (x, y) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let gx = ctx.needs[0].then(|| ctx.grad.iter().zip(y).map(|(&g, &v)| g * v).collect());
            let gy = ctx.needs[1].then(|| ctx.grad.iter().zip(x).map(|(&g, &v)| g * v).collect());
            vec![gx, gy]
        }))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.record(out, &[x], move |ctx| {
            vec![Some(ctx.grad.iter().map(|&g| g * s).collect())]
        })
    }

    /// Applies `f` elementwise; `df(x, y)` is the derivative given input and output.
    fn unary(&mut self, x: Var, f: fn(T) -> T, df: fn(T, T) -> T) -> Var {
        let out = self.value(x).map(f);
        self.record(out, &[x], move |ctx| {
            let g = ctx
                .grad
                .iter()
                .zip(ctx.inputs[0].data())
                .zip(ctx.output.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(g)]
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    /// |x|, with subgradient 0 at the origin.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Parametric ReLU. `slope` holds one value, or one per entry of `axis`.
    pub fn prelu(&mut self, x: Var, slope: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let na = self.value(slope).len();
        ensure_shape!(axis < shape.len(), "prelu: axis {axis} out of range for {shape:?}");
        ensure_shape!(
            na == 1 || na == shape[axis],
            "prelu: {na} slopes for axis of size {}",
            shape[axis]
        );
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let chan = move |i: usize| if na == 1 { 0 } else { (i / inner) % dim };
        let (xv, av) = (self.value(x), self.value(slope));
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > T::zero() { v } else { av.data()[chan(i)] * v })
            .collect();
        let out = Tensor::new(&shape, data)?;
        Ok(self.record(out, &[x, slope], move |ctx| {
            let (x, a) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let mut gx = vec![T::zero(); x.len()];
            let mut ga = vec![T::zero(); a.len()];
            for (i, (&g, &v)) in ctx.grad.iter().zip(x).enumerate() {
                if v > T::zero() {
                    gx[i] = g;
                } else {
                    let c = chan(i);
                    gx[i] = g * a[c];
                    ga[c] += g * v;
                }
            }
            vec![Some(gx), Some(ga)]
        }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.record(Tensor::scalar(s), &[x], |ctx| {
            vec![Some(vec![ctx.grad[0]; ctx.inputs[0].len()])]
        })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::usize(self.value(x).len());
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        ensure_shape!(!shape.is_empty(), "softmax needs at least one axis");
        let d = *shape.last().unwrap();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(d) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.record(out, &[x], move |ctx| {
            let y = ctx.output.data();
            let mut gx = vec![T::zero(); y.len()];
            for ((gr, yr), out) in ctx.grad.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                let s: T = gr.iter().zip(yr).map(|(&g, &p)| g * p).sum();
                for ((o, &g), &p) in out.iter_mut().zip(gr).zip(yr) {
                    *o = p * (g - s);
                }
            }
            vec![Some(gx)]
        }))
    }
}

/// Scalar parametric ReLU used outside the graph.
pub fn prelu_scalar<T: Real>(x: T, a: T) -> T {
    if x > T::zero() {
        x
    } else {
        a * x
    }
}
