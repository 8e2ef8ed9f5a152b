use super::graph::{Graph, Var};
use super::kernels::{gemm_acc, Layout};
use crate::error::{ensure_shape, Result};
use crate::tensor::{Real, Tensor};

impl<T: Real> Graph<T> {
    /// `y = x W + b` over the last axis of `x`; `W` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        ensure_shape!(
            !xs.is_empty() && ws.len() == 2 && xs[xs.len() - 1] == ws[0],
            "linear: input {xs:?} incompatible with weight {ws:?}"
        );
        let (din, dout) = (ws[0], ws[1]);
        if let Some(b) = b {
            ensure_shape!(
                self.shape(b) == [dout],
                "linear: bias {:?} does not match {dout} outputs",
                self.shape(b)
            );
        }
        let m = self.value(x).len() / din;
        let mut y = vec![T::zero(); m * dout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in y.chunks_mut(dout) {
                row.copy_from_slice(bias);
            }
        }
        gemm_acc(
            self.value(x).data(),
            Layout::Normal,
            self.value(w).data(),
            Layout::Normal,
            &mut y,
            m,
            din,
            dout,
        );
        let mut out_shape = xs.clone();
        *out_shape.last_mut().unwrap() = dout;
        let out = Tensor::new(&out_shape, y)?;
        let parents: Vec<Var> = std::iter::once(x).chain(std::iter::once(w)).chain(b).collect();
        Ok(self.record(out, &parents, move |ctx| {
            let (xd, wd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let gx = ctx.needs[0].then(|| {
                let mut gx = vec![T::zero(); m * din];
                gemm_acc(ctx.grad, Layout::Normal, wd, Layout::Transposed, &mut gx, m, dout, din);
                gx
            });
            let gw = ctx.needs[1].then(|| {
                let mut gw = vec![T::zero(); din * dout];
                gemm_acc(xd, Layout::Transposed, ctx.grad, Layout::Normal, &mut gw, din, m, dout);
                gw
            });
            let mut grads = vec![gx, gw];
            if ctx.inputs.len() == 3 {
                let mut gb = vec![T::zero(); dout];
                for row in ctx.grad.chunks(dout) {
                    gb.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                }
                grads.push(Some(gb));
            }
            grads
        }))
    }

    /// Batched product of `[B, m, k]` with `[B, k, n]`, or with `[B, n, k]`
    /// transposed when `transpose_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        ensure_shape!(
            sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0],
            "bmm: {sa:?} and {sb:?} are not batched matrices of equal batch"
        );
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        ensure_shape!(k == kb, "bmm: inner dims {k} and {kb} differ");
        let lb = if transpose_b { Layout::Transposed } else { Layout::Normal };
        let mut c = vec![T::zero(); batch * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                gemm_acc(
                    &ad[i * m * k..(i + 1) * m * k],
                    Layout::Normal,
                    &bd[i * k * n..(i + 1) * k * n],
                    lb,
                    &mut c[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let out = Tensor::new(&[batch, m, n], c)?;
        Ok(self.record(out, &[a, b], move |ctx| {
            let (ad, bd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let mut ga = ctx.needs[0].then(|| vec![T::zero(); batch * m * k]);
            let mut gb = ctx.needs[1].then(|| vec![T::zero(); batch * k * n]);
            for i in 0..batch {
                let gc = &ctx.grad[i * m * n..(i + 1) * m * n];
                let ai = &ad[i * m * k..(i + 1) * m * k];
                let bi = &bd[i * k * n..(i + 1) * k * n];
                if let Some(ga) = ga.as_mut() {
                    let out = &mut ga[i * m * k..(i + 1) * m * k];
                    if transpose_b {
                        gemm_acc(gc, Layout::Normal, bi, Layout::Normal, out, m, n, k);
                    } else {
                        gemm_acc(gc, Layout::Normal, bi, Layout::Transposed, out, m, n, k);
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    let out = &mut gb[i * k * n..(i + 1) * k * n];
                    if transpose_b {
                        // d(B^T) = dC^T A, stored as [n, k]
                        gemm_acc(gc, Layout::Transposed, ai, Layout::Normal, out, n, m, k);
                    } else {
                        gemm_acc(ai, Layout::Transposed, gc, Layout::Normal, out, k, m, n);
                    }
                }
            }
            vec![ga, gb]
        }))
    }
}
