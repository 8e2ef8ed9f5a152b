//! 2-D cross-correlation over `[B, C, N, F]` feature maps.

use super::graph::{Graph, Var};
use crate::error::{ensure_shape, Result};
use crate::tensor::{Real, Tensor};

/// Zero padding policy for [`Graph::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Pad so stride-1 outputs keep the input extent (exact for odd kernels).
    Same,
    /// Pad only the low side of the frame axis N by `(kN - 1) * dN`;
    /// the F axis gets `Same` padding.
    CausalN,
    Valid,
    /// Explicit `(n_lo, n_hi, f_lo, f_hi)`.
    Explicit(usize, usize, usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: Padding,
}

impl Default for Conv2dOpts {
    fn default() -> Self {
        Conv2dOpts {
            stride: (1, 1),
            dilation: (1, 1),
            padding: Padding::Valid,
        }
    }
}

impl Conv2dOpts {
    pub fn padded(padding: Padding) -> Self {
        Conv2dOpts {
            padding,
            ..Default::default()
        }
    }

    fn pads(&self, kn: usize, kf: usize) -> (usize, usize, usize, usize) {
        let same = |k: usize, d: usize| {
            let total = d * (k - 1);
            (total / 2, total - total / 2)
        };
        match self.padding {
            Padding::Valid => (0, 0, 0, 0),
            Padding::Same => {
                let (a, b) = same(kn, self.dilation.0);
                let (c, d) = same(kf, self.dilation.1);
                (a, b, c, d)
            }
            Padding::CausalN => {
                let (c, d) = same(kf, self.dilation.1);
                ((kn - 1) * self.dilation.0, 0, c, d)
            }
            Padding::Explicit(a, b, c, d) => (a, b, c, d),
        }
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    b: usize,
    ci: usize,
    co: usize,
    n: usize,
    f: usize,
    kn: usize,
    kf: usize,
    no: usize,
    fo: usize,
    sn: usize,
    sf: usize,
    dn: usize,
    df: usize,
    pn: usize,
    pf: usize,
}

impl Geometry {
    /// Input row for output row `on` and tap `k`, if inside the input.
    #[inline]
    fn in_n(&self, on: usize, k: usize) -> Option<usize> {
        (on * self.sn + k * self.dn).checked_sub(self.pn).filter(|&v| v < self.n)
    }

    /// Range of output columns whose input column for tap `k` is in bounds,
    /// plus the input column of the first one.
    #[inline]
    fn f_range(&self, k: usize) -> (usize, usize, usize) {
        let off = k * self.df;
        // need 0 <= of*sf + off - pf < f
        let lo = if off >= self.pf {
            0
        } else {
            (self.pf - off).div_ceil(self.sf)
        };
        let hi_excl = if self.f + self.pf <= off {
            0
        } else {
            ((self.f + self.pf - off - 1) / self.sf + 1).min(self.fo)
        };
        let lo = lo.min(hi_excl);
        let start = (lo * self.sf + off).saturating_sub(self.pf);
        (lo, hi_excl, start)
    }
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of `x: [B, Cin, N, F]` with `w: [Cout, Cin, kN, kF]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, opts: Conv2dOpts) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        ensure_shape!(xs.len() == 4, "conv2d: input must be [B, C, N, F], got {xs:?}");
        ensure_shape!(ws.len() == 4, "conv2d: kernel must be [Cout, Cin, kN, kF], got {ws:?}");
        ensure_shape!(
            ws[1] == xs[1],
            "conv2d: kernel expects {} input channels, input has {}",
            ws[1],
            xs[1]
        );
        ensure_shape!(
            opts.stride.0 >= 1 && opts.stride.1 >= 1 && opts.dilation.0 >= 1 && opts.dilation.1 >= 1,
            "conv2d: stride and dilation must be positive"
        );
        if let Some(b) = bias {
            ensure_shape!(self.shape(b) == [ws[0]], "conv2d: bias must have {} entries", ws[0]);
        }
        let (kn, kf) = (ws[2], ws[3]);
        let (pn_lo, pn_hi, pf_lo, pf_hi) = opts.pads(kn, kf);
        let span_n = opts.dilation.0 * (kn - 1) + 1;
        let span_f = opts.dilation.1 * (kf - 1) + 1;
        let (padded_n, padded_f) = (xs[2] + pn_lo + pn_hi, xs[3] + pf_lo + pf_hi);
        ensure_shape!(
            span_n <= padded_n && span_f <= padded_f,
            "conv2d: kernel span ({span_n}, {span_f}) exceeds padded input ({padded_n}, {padded_f})"
        );
        let geo = Geometry {
            b: xs[0],
            ci: xs[1],
            co: ws[0],
            n: xs[2],
            f: xs[3],
            kn,
            kf,
            no: (padded_n - span_n) / opts.stride.0 + 1,
            fo: (padded_f - span_f) / opts.stride.1 + 1,
            sn: opts.stride.0,
            sf: opts.stride.1,
            dn: opts.dilation.0,
            df: opts.dilation.1,
            pn: pn_lo,
            pf: pf_lo,
        };
        let out = conv_forward(
            &geo,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(&[geo.b, geo.co, geo.no, geo.fo], out)?;
        let parents: Vec<Var> = [x, w].into_iter().chain(bias).collect();
        Ok(self.record(out, &parents, move |ctx| {
            let (xd, wd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let gx = ctx.needs[0].then(|| conv_backward_input(&geo, ctx.grad, wd));
            let gw = ctx.needs[1].then(|| conv_backward_weight(&geo, ctx.grad, xd));
            let mut grads = vec![gx, gw];
            if ctx.inputs.len() == 3 {
                let plane = geo.no * geo.fo;
                let mut gb = vec![T::zero(); geo.co];
                for (i, chunk) in ctx.grad.chunks(plane).enumerate() {
                    gb[i % geo.co] += chunk.iter().copied().sum::<T>();
                }
                grads.push(Some(gb));
            }
            grads
        }))
    }
}

fn conv_forward<T: Real>(g: &Geometry, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (in_plane, out_plane) = (g.n * g.f, g.no * g.fo);
    let mut out = vec![T::zero(); g.b * g.co * out_plane];
    for b in 0..g.b {
        for co in 0..g.co {
            let o = &mut out[(b * g.co + co) * out_plane..][..out_plane];
            if let Some(bias) = bias {
                o.iter_mut().for_each(|v| *v = bias[co]);
            }
            for ci in 0..g.ci {
                let xi = &x[(b * g.ci + ci) * in_plane..][..in_plane];
                for tn in 0..g.kn {
                    for tf in 0..g.kf {
                        let wv = w[((co * g.ci + ci) * g.kn + tn) * g.kf + tf];
                        if wv == T::zero() {
                            continue;
                        }
                        let (lo, hi, start) = g.f_range(tf);
                        if lo >= hi {
                            continue;
                        }
                        for on in 0..g.no {
                            let Some(inn) = g.in_n(on, tn) else { continue };
                            let orow = &mut o[on * g.fo + lo..on * g.fo + hi];
                            let xrow = &xi[inn * g.f + start..];
                            if g.sf == 1 {
                                for (ov, &xv) in orow.iter_mut().zip(xrow) {
                                    *ov += wv * xv;
                                }
                            } else {
                                for (j, ov) in orow.iter_mut().enumerate() {
                                    *ov += wv * xrow[j * g.sf];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward_input<T: Real>(g: &Geometry, dy: &[T], w: &[T]) -> Vec<T> {
    let (in_plane, out_plane) = (g.n * g.f, g.no * g.fo);
    let mut dx = vec![T::zero(); g.b * g.ci * in_plane];
    for b in 0..g.b {
        for ci in 0..g.ci {
            let dxi = &mut dx[(b * g.ci + ci) * in_plane..][..in_plane];
            for co in 0..g.co {
                let dyo = &dy[(b * g.co + co) * out_plane..][..out_plane];
                for tn in 0..g.kn {
                    for tf in 0..g.kf {
                        let wv = w[((co * g.ci + ci) * g.kn + tn) * g.kf + tf];
                        if wv == T::zero() {
                            continue;
                        }
                        let (lo, hi, start) = g.f_range(tf);
                        if lo >= hi {
                            continue;
                        }
                        for on in 0..g.no {
                            let Some(inn) = g.in_n(on, tn) else { continue };
                            let drow = &dyo[on * g.fo + lo..on * g.fo + hi];
                            let xrow = &mut dxi[inn * g.f + start..];
                            if g.sf == 1 {
                                for (xv, &dv) in xrow.iter_mut().zip(drow) {
                                    *xv += wv * dv;
                                }
                            } else {
                                for (j, &dv) in drow.iter().enumerate() {
                                    xrow[j * g.sf] += wv * dv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn conv_backward_weight<T: Real>(g: &Geometry, dy: &[T], x: &[T]) -> Vec<T> {
    let (in_plane, out_plane) = (g.n * g.f, g.no * g.fo);
    let mut dw = vec![T::zero(); g.co * g.ci * g.kn * g.kf];
    for co in 0..g.co {
        for ci in 0..g.ci {
            for tn in 0..g.kn {
                for tf in 0..g.kf {
                    let (lo, hi, start) = g.f_range(tf);
                        if lo >= hi {
                            continue;
                        }
                    let mut acc = T::zero();
                    for b in 0..g.b {
                        let dyo = &dy[(b * g.co + co) * out_plane..][..out_plane];
                        let xi = &x[(b * g.ci + ci) * in_plane..][..in_plane];
                        for on in 0..g.no {
                            let Some(inn) = g.in_n(on, tn) else { continue };
                            let drow = &dyo[on * g.fo + lo..on * g.fo + hi];
                            let xrow = &xi[inn * g.f + start..];
                            if g.sf == 1 {
                                for (&dv, &xv) in drow.iter().zip(xrow) {
                                    acc += dv * xv;
                                }
                            } else {
                                for (j, &dv) in drow.iter().enumerate() {
                                    acc += dv * xrow[j * g.sf];
                                }
                            }
                        }
                    }
                    dw[((co * g.ci + ci) * g.kn + tn) * g.kf + tf] = acc;
                }
            }
        }
    }
    dw
}
