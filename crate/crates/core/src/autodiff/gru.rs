//! Fused GRU layer with backpropagation through time.
//!
//! Gate rows are ordered (reset, update, candidate):
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use super::graph::{Graph, Var};
use super::kernels::{gemm_acc, sigmoid, Layout};
use crate::error::{ensure_shape, Result};
use crate::tensor::{Real, Tensor};

/// Graph handles for one GRU direction.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    /// `[3H, I]`
    pub w_ih: Var,
    /// `[3H, H]`
    pub w_hh: Var,
    /// `[3H]`
    pub b_ih: Var,
    /// `[3H]`
    pub b_hh: Var,
}

#[derive(Clone, Copy)]
struct Dims {
    seq: usize,
    batch: usize,
    input: usize,
    hidden: usize,
}

/// Activations saved by the forward pass of one direction, each `[S, B, H]`.
struct Trace<T> {
    h: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    ghn: Vec<T>,
}

fn order(seq: usize, reverse: bool) -> impl Iterator<Item = usize> {
    (0..seq).map(move |i| if reverse { seq - 1 - i } else { i })
}

fn run_direction<T: Real>(
    d: Dims,
    x: &[T],
    h0: &[T],
    w: [&[T]; 4],
    reverse: bool,
) -> Trace<T> {
    let [w_ih, w_hh, b_ih, b_hh] = w;
    let (bh, h3) = (d.batch * d.hidden, 3 * d.hidden);
    let rows = d.seq * d.batch;
    let mut gx = vec![T::zero(); rows * h3];
    for row in gx.chunks_mut(h3) {
        row.copy_from_slice(b_ih);
    }
    gemm_acc(x, Layout::Normal, w_ih, Layout::Transposed, &mut gx, rows, d.input, h3);

    let mut tr = Trace {
        h: vec![T::zero(); d.seq * bh],
        r: vec![T::zero(); d.seq * bh],
        z: vec![T::zero(); d.seq * bh],
        n: vec![T::zero(); d.seq * bh],
        ghn: vec![T::zero(); d.seq * bh],
    };
    let mut h_prev = h0.to_vec();
    let mut gh = vec![T::zero(); d.batch * h3];
    for t in order(d.seq, reverse) {
        for row in gh.chunks_mut(h3) {
            row.copy_from_slice(b_hh);
        }
        gemm_acc(&h_prev, Layout::Normal, w_hh, Layout::Transposed, &mut gh, d.batch, d.hidden, h3);
        for b in 0..d.batch {
            let gxr = &gx[(t * d.batch + b) * h3..][..h3];
            let ghr = &gh[b * h3..][..h3];
            for j in 0..d.hidden {
                let k = t * bh + b * d.hidden + j;
                let r = sigmoid(gxr[j] + ghr[j]);
                let z = sigmoid(gxr[d.hidden + j] + ghr[d.hidden + j]);
                let ghn = ghr[2 * d.hidden + j];
                let n = (gxr[2 * d.hidden + j] + r * ghn).tanh();
                let hp = h_prev[b * d.hidden + j];
                tr.r[k] = r;
                tr.z[k] = z;
                tr.n[k] = n;
                tr.ghn[k] = ghn;
                tr.h[k] = (T::one() - z) * n + z * hp;
            }
        }
        h_prev.copy_from_slice(&tr.h[t * bh..(t + 1) * bh]);
    }
    tr
}

struct DirGrads<T> {
    x: Vec<T>,
    h0: Vec<T>,
    w_ih: Vec<T>,
    w_hh: Vec<T>,
    b_ih: Vec<T>,
    b_hh: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
fn backward_direction<T: Real>(
    d: Dims,
    x: &[T],
    h0: &[T],
    w: [&[T]; 4],
    tr: &Trace<T>,
    grad_out: &[T],
    dirs: usize,
    offset: usize,
    reverse: bool,
) -> DirGrads<T> {
    let [w_ih, w_hh, _, _] = w;
    let (hid, bh, h3) = (d.hidden, d.batch * d.hidden, 3 * d.hidden);
    let rows = d.seq * d.batch;
    let mut dgx = vec![T::zero(); rows * h3];
    let mut g = DirGrads {
        x: vec![T::zero(); rows * d.input],
        h0: vec![T::zero(); bh],
        w_ih: vec![T::zero(); h3 * d.input],
        w_hh: vec![T::zero(); h3 * hid],
        b_ih: vec![T::zero(); h3],
        b_hh: vec![T::zero(); h3],
    };
    let mut carry = vec![T::zero(); bh];
    let mut dgh = vec![T::zero(); d.batch * h3];
    let steps: Vec<usize> = order(d.seq, reverse).collect();
    for (pos, &t) in steps.iter().enumerate().rev() {
        let h_prev: &[T] = if pos == 0 {
            h0
        } else {
            &tr.h[steps[pos - 1] * bh..][..bh]
        };
        let mut next_carry = vec![T::zero(); bh];
        for b in 0..d.batch {
            for j in 0..hid {
                let k = t * bh + b * hid + j;
                let dh = grad_out[(t * d.batch + b) * hid * dirs + offset + j] + carry[b * hid + j];
                let (r, z, n, ghn) = (tr.r[k], tr.z[k], tr.n[k], tr.ghn[k]);
                let hp = h_prev[b * hid + j];
                let dn = dh * (T::one() - z);
                let dz = dh * (hp - n);
                next_carry[b * hid + j] = dh * z;
                let dpre_n = dn * (T::one() - n * n);
                let dr = dpre_n * ghn;
                let dpre_r = dr * r * (T::one() - r);
                let dpre_z = dz * z * (T::one() - z);
                let gxr = &mut dgx[(t * d.batch + b) * h3..][..h3];
                gxr[j] = dpre_r;
                gxr[hid + j] = dpre_z;
                gxr[2 * hid + j] = dpre_n;
                let ghr = &mut dgh[b * h3..][..h3];
                ghr[j] = dpre_r;
                ghr[hid + j] = dpre_z;
                ghr[2 * hid + j] = dpre_n * r;
            }
        }
        gemm_acc(&dgh, Layout::Normal, w_hh, Layout::Normal, &mut next_carry, d.batch, h3, hid);
        gemm_acc(&dgh, Layout::Transposed, h_prev, Layout::Normal, &mut g.w_hh, h3, d.batch, hid);
        for row in dgh.chunks(h3) {
            g.b_hh.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        carry = next_carry;
    }
    g.h0 = carry;
    gemm_acc(&dgx, Layout::Normal, w_ih, Layout::Normal, &mut g.x, rows, h3, d.input);
    gemm_acc(&dgx, Layout::Transposed, x, Layout::Normal, &mut g.w_ih, h3, rows, d.input);
    for row in dgx.chunks(h3) {
        g.b_ih.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
    }
    g
}

impl<T: Real> Graph<T> {
    /// GRU over `x: [S, B, I]` from initial state `h0: [B, H]` (zeros when
    /// `None`). With a second direction the reversed-time pass is
    /// concatenated, giving `[S, B, 2H]`.
    pub fn gru(
        &mut self,
        x: Var,
        h0: Option<Var>,
        forward: GruVars,
        backward: Option<GruVars>,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        ensure_shape!(xs.len() == 3, "gru: input must be [S, B, I], got {xs:?}");
        let ws = self.shape(forward.w_hh).to_vec();
        ensure_shape!(
            ws.len() == 2 && ws[0] == 3 * ws[1],
            "gru: recurrent weight must be [3H, H], got {ws:?}"
        );
        let d = Dims {
            seq: xs[0],
            batch: xs[1],
            input: xs[2],
            hidden: ws[1],
        };
        let dirs: Vec<GruVars> = std::iter::once(forward).chain(backward).collect();
        for v in &dirs {
            ensure_shape!(
                self.shape(v.w_ih) == [3 * d.hidden, d.input]
                    && self.shape(v.w_hh) == [3 * d.hidden, d.hidden]
                    && self.shape(v.b_ih) == [3 * d.hidden]
                    && self.shape(v.b_hh) == [3 * d.hidden],
                "gru: weights inconsistent with input {} and hidden {}",
                d.input,
                d.hidden
            );
        }
        let h0 = match h0 {
            Some(h) => {
                ensure_shape!(
                    self.shape(h) == [d.batch, d.hidden],
                    "gru: h0 must be [{}, {}], got {:?}",
                    d.batch,
                    d.hidden,
                    self.shape(h)
                );
                h
            }
            None => self.constant(Tensor::zeros(&[d.batch, d.hidden])),
        };

        let n_dirs = dirs.len();
        let traces: Vec<Trace<T>> = dirs
            .iter()
            .enumerate()
            .map(|(k, v)| {
                run_direction(
                    d,
                    self.value(x).data(),
                    self.value(h0).data(),
                    [
                        self.value(v.w_ih).data(),
                        self.value(v.w_hh).data(),
                        self.value(v.b_ih).data(),
                        self.value(v.b_hh).data(),
                    ],
                    k == 1,
                )
            })
            .collect();
        let width = d.hidden * n_dirs;
        let mut out = vec![T::zero(); d.seq * d.batch * width];
        for (k, tr) in traces.iter().enumerate() {
            for (row, src) in out.chunks_mut(width).zip(tr.h.chunks(d.hidden)) {
                row[k * d.hidden..(k + 1) * d.hidden].copy_from_slice(src);
            }
        }
        let out = Tensor::new(&[d.seq, d.batch, width], out)?;
        let mut parents = vec![x, h0];
        for v in &dirs {
            parents.extend([v.w_ih, v.w_hh, v.b_ih, v.b_hh]);
        }
        Ok(self.record(out, &parents, move |ctx| {
            let (xd, h0d) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let mut gx = vec![T::zero(); xd.len()];
            let mut gh0 = vec![T::zero(); h0d.len()];
            let mut grads = vec![None, None];
            for (k, tr) in traces.iter().enumerate() {
                let w = [
                    ctx.inputs[2 + 4 * k].data(),
                    ctx.inputs[3 + 4 * k].data(),
                    ctx.inputs[4 + 4 * k].data(),
                    ctx.inputs[5 + 4 * k].data(),
                ];
                let g = backward_direction(
                    d,
                    xd,
                    h0d,
                    w,
                    tr,
                    ctx.grad,
                    n_dirs,
                    k * d.hidden,
                    k == 1,
                );
                gx.iter_mut().zip(&g.x).for_each(|(a, &b)| *a += b);
                gh0.iter_mut().zip(&g.h0).for_each(|(a, &b)| *a += b);
                grads.extend([Some(g.w_ih), Some(g.w_hh), Some(g.b_ih), Some(g.b_hh)]);
            }
            grads[0] = Some(gx);
            grads[1] = Some(gh0);
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    fn scalar_gru(
        g: &mut Graph<f64>,
        w_ih: [f64; 3],
        w_hh: [f64; 3],
        b_ih: [f64; 3],
    ) -> GruVars {
        GruVars {
            w_ih: g.input(Tensor::new(&[3, 1], w_ih.to_vec()).unwrap(), false),
            w_hh: g.input(Tensor::new(&[3, 1], w_hh.to_vec()).unwrap(), false),
            b_ih: g.input(Tensor::new(&[3], b_ih.to_vec()).unwrap(), false),
            b_hh: g.input(Tensor::zeros(&[3]), false),
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut g = Graph::<f64>::new(&ParamStore::new());
        let x = g.input(Tensor::from_fn(&[4, 2, 1], |i| i as f64 - 3.0), false);
        let p = scalar_gru(&mut g, [0.0; 3], [0.0; 3], [0.0; 3]);
        let y = g.gru(x, None, p, Some(p)).unwrap();
        assert_eq!(g.shape(y), &[4, 2, 2]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_update_gate_carries_state() {
        let mut g = Graph::<f64>::new(&ParamStore::new());
        let x = g.input(Tensor::from_fn(&[5, 1, 1], |i| (i as f64).sin()), false);
        let h0 = g.input(Tensor::new(&[1, 1], vec![0.7]).unwrap(), false);
        let p = scalar_gru(&mut g, [0.3, 0.2, 1.0], [0.1, 0.4, 0.5], [0.0, 50.0, 0.0]);
        let y = g.gru(x, Some(h0), p, None).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_recurrence_with_candidate_only() {
        // W_z = U_z = W_r = U_r = 0 -> z = r = 1/2; n = tanh(x); h' = (n + h) / 2
        let mut g = Graph::<f64>::new(&ParamStore::new());
        let x = g.input(Tensor::new(&[3, 1, 1], vec![1.0, 1.0, -0.5]).unwrap(), false);
        let p = scalar_gru(&mut g, [0.0, 0.0, 1.0], [0.0; 3], [0.0; 3]);
        let y = g.gru(x, None, p, None).unwrap();
        let t1 = 1f64.tanh();
        let h1 = 0.5 * t1;
        let h2 = 0.5 * t1 + 0.5 * h1;
        let h3 = 0.5 * (-0.5f64).tanh() + 0.5 * h2;
        let got = g.value(y).data();
        for (a, b) in got.iter().zip([h1, h2, h3]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn reverse_direction_reads_time_backwards() {
        let mut g = Graph::<f64>::new(&ParamStore::new());
        let x = g.input(Tensor::new(&[3, 1, 1], vec![1.0, 1.0, -0.5]).unwrap(), false);
        let xr = g.input(Tensor::new(&[3, 1, 1], vec![-0.5, 1.0, 1.0]).unwrap(), false);
        let p = scalar_gru(&mut g, [0.2, -0.1, 1.0], [0.3, 0.1, -0.4], [0.1, 0.0, 0.2]);
        let bi = g.gru(x, None, p, Some(p)).unwrap();
        let uni = g.gru(xr, None, p, None).unwrap();
        let (b, u) = (g.value(bi).data(), g.value(uni).data());
        for t in 0..3 {
            assert!((b[t * 2 + 1] - u[2 - t]).abs() < 1e-15);
        }
    }
}
