//! One-sided short-time Fourier transform with a differentiable graph op.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::autodiff::{Graph, Var};
use crate::error::{ensure_shape, Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi j / n)`.
    Hann,
    Rectangular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftSpec {
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftSpec {
    fn default() -> Self {
        StftSpec {
            fft_size: 512,
            hop: 256,
            window: Window::Hann,
        }
    }
}

impl StftSpec {
    pub fn new(fft_size: usize, hop: usize) -> Result<Self> {
        let spec = StftSpec {
            fft_size,
            hop,
            window: Window::Hann,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() {
            return Err(Error::config("fft_size", format!("{} is not a power of two", self.fft_size)));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::config("fft_hop", format!("{} not in [1, {}]", self.hop, self.fft_size)));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples; short or off-grid
    /// signals are zero-padded on the right.
    pub fn n_frames(&self, len: usize) -> usize {
        1 + len.saturating_sub(self.fft_size).div_ceil(self.hop)
    }

    pub fn window_values(&self) -> Vec<f64> {
        let n = self.fft_size;
        match self.window {
            Window::Hann => (0..n)
                .map(|j| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Plans {
    fn new(spec: &StftSpec) -> Self {
        let mut planner = FftPlanner::new();
        Plans {
            forward: planner.plan_fft_forward(spec.fft_size),
            inverse: planner.plan_fft_inverse(spec.fft_size),
            window: spec.window_values(),
        }
    }
}

/// Spectrogram of one signal as `frames x bins` complex values.
fn spectrum<T: Real>(x: &[T], spec: &StftSpec, plans: &Plans) -> Vec<Complex<f64>> {
    let (n, bins) = (spec.fft_size, spec.bins());
    let frames = spec.n_frames(x.len());
    let mut out = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex::default(); n];
    for t in 0..frames {
        for (j, slot) in buf.iter_mut().enumerate() {
            let v = x.get(t * spec.hop + j).map_or(0.0, |v| v.as_f64());
            *slot = Complex::new(v * plans.window[j], 0.0);
        }
        plans.forward.process(&mut buf);
        out.extend_from_slice(&buf[..bins]);
    }
    out
}

/// Complex STFT of `x`, `frames x bins`, row-major.
pub fn stft<T: Real>(x: &[T], spec: &StftSpec) -> Result<Vec<Complex<f64>>> {
    spec.validate()?;
    Ok(spectrum(x, spec, &Plans::new(spec)))
}

impl<T: Real> Graph<T> {
    /// STFT of each row of `x: [B, L]`, returned as `[B, frames, bins, 2]`
    /// with real and imaginary parts in the last axis.
    pub fn stft(&mut self, x: Var, spec: StftSpec) -> Result<Var> {
        spec.validate()?;
        let shape = self.shape(x).to_vec();
        ensure_shape!(shape.len() == 2, "stft needs [B, L], got {shape:?}");
        let (b, len) = (shape[0], shape[1]);
        let (frames, bins, n) = (spec.n_frames(len), spec.bins(), spec.fft_size);
        let plans = Plans::new(&spec);
        let mut data = Vec::with_capacity(b * frames * bins * 2);
        for row in self.value(x).data().chunks(len) {
            for c in spectrum(row, &spec, &plans) {
                data.push(T::lit(c.re));
                data.push(T::lit(c.im));
            }
        }
        let out = Tensor::new(&[b, frames, bins, 2], data)?;
        Ok(self.record(out, &[x], move |ctx| {
            // d/dy_j of sum_k gr_k Re X_k + gi_k Im X_k = Re(sum_k (gr_k + i gi_k) e^{+2 pi i jk/n})
            let mut g = vec![T::zero(); b * len];
            let mut buf = vec![Complex::default(); n];
            for bi in 0..b {
                for t in 0..frames {
                    buf.fill(Complex::default());
                    let base = ((bi * frames + t) * bins) * 2;
                    for k in 0..bins {
                        let gr = ctx.grad[base + 2 * k].as_f64();
                        let gi = ctx.grad[base + 2 * k + 1].as_f64();
                        buf[k] = Complex::new(gr, gi);
                    }
                    plans.inverse.process(&mut buf);
                    for j in 0..n {
                        let p = t * spec.hop + j;
                        if p < len {
                            g[bi * len + p] += T::lit(buf[j].re * plans.window[j]);
                        }
                    }
                }
            }
            vec![Some(g)]
        }))
    }
}
