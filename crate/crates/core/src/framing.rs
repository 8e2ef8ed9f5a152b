//! Waveform segmentation into overlapped frames and its exact inverse.
//!
//! Frames are `frame_size` samples long and start `stride = frame_size -
//! overlap` samples apart. Signals whose length does not fall on the frame
//! grid are zero-padded on the right; the original length is carried along
//! so overlap-add can trim the padding again. Overlap-add divides each
//! output sample by the number of frames covering it, which makes it the
//! exact inverse of segmentation.

use crate::autodiff::{Graph, Var};
use crate::error::{ensure_shape, Error, Result};
use crate::tensor::{Real, Tensor};

/// Mono waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Usage(format!("sample {i} is not finite")));
        }
        Ok(AudioBuffer {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Rank-4 `[batch, channels, n_frames, frame_dim]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTensor<T>(Tensor<T>);

impl<T: Real> FrameTensor<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        ensure_shape!(
            t.rank() == 4 && t.shape().iter().all(|&d| d >= 1),
            "frame tensor must be [B, C, N, F] with positive dims, got {:?}",
            t.shape()
        );
        Ok(FrameTensor(t))
    }

    pub fn dims(&self) -> [usize; 4] {
        let s = self.0.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FramingSpec {
    pub frame_size: usize,
    pub overlap: usize,
}

impl FramingSpec {
    pub fn new(frame_size: usize, overlap: usize) -> Result<Self> {
        let spec = FramingSpec {
            frame_size,
            overlap,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 {
            return Err(Error::config("frame_size", "must be positive"));
        }
        if self.overlap == 0 || self.overlap >= self.frame_size {
            return Err(Error::config(
                "overlap",
                format!("must satisfy 0 < overlap < frame_size ({})", self.frame_size),
            ));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.frame_size - self.overlap
    }

    /// Length after right padding onto the frame grid.
    pub fn padded_len(&self, len: usize) -> usize {
        let f = self.frame_size;
        let s = self.stride();
        f + (len.max(f) - f).div_ceil(s) * s
    }

    pub fn n_frames(&self, len: usize) -> usize {
        (self.padded_len(len) - self.frame_size) / self.stride() + 1
    }

    /// Number of frames covering each position of the padded signal.
    fn coverage(&self, n_frames: usize) -> Vec<u32> {
        let total = (n_frames - 1) * self.stride() + self.frame_size;
        let mut c = vec![0u32; total];
        for n in 0..n_frames {
            c[n * self.stride()..n * self.stride() + self.frame_size]
                .iter_mut()
                .for_each(|v| *v += 1);
        }
        c
    }
}

/// Splits samples into `[n_frames, frame_size]` rows after zero padding.
pub fn frame_samples<T: Real>(samples: &[T], spec: &FramingSpec) -> Result<Vec<T>> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::Usage("cannot segment an empty signal".into()));
    }
    let (f, s) = (spec.frame_size, spec.stride());
    let mut padded = samples.to_vec();
    padded.resize(spec.padded_len(samples.len()), T::zero());
    let n = spec.n_frames(samples.len());
    let mut out = Vec::with_capacity(n * f);
    for i in 0..n {
        out.extend_from_slice(&padded[i * s..i * s + f]);
    }
    Ok(out)
}

/// Segments a waveform into a `[1, 1, N, F]` frame tensor and returns the
/// original length.
pub fn segment(audio: &AudioBuffer, spec: &FramingSpec) -> Result<(FrameTensor<f32>, usize)> {
    let frames = frame_samples(&audio.samples, spec)?;
    let n = spec.n_frames(audio.len());
    let t = Tensor::new(&[1, 1, n, spec.frame_size], frames)?;
    Ok((FrameTensor::new(t)?, audio.len()))
}

/// Segments a batch of equal-length signals into `[B, 1, N, F]`.
pub fn segment_batch<T: Real>(signals: &[Vec<T>], spec: &FramingSpec) -> Result<FrameTensor<T>> {
    ensure_shape!(!signals.is_empty(), "empty batch");
    let len = signals[0].len();
    ensure_shape!(
        signals.iter().all(|s| s.len() == len),
        "batch signals must share one length"
    );
    let n = spec.n_frames(len);
    let mut data = Vec::with_capacity(signals.len() * n * spec.frame_size);
    for s in signals {
        data.extend(frame_samples(s, spec)?);
    }
    FrameTensor::new(Tensor::new(&[signals.len(), 1, n, spec.frame_size], data)?)
}

fn check_frames(shape: &[usize], spec: &FramingSpec, original_length: usize) -> Result<()> {
    spec.validate()?;
    ensure_shape!(
        shape.len() == 4 && shape[1] == 1,
        "overlap-add needs [B, 1, N, F] frames, got {shape:?}"
    );
    ensure_shape!(
        shape[3] == spec.frame_size,
        "frame_dim {} does not match frame_size {}",
        shape[3],
        spec.frame_size
    );
    let total = (shape[2] - 1) * spec.stride() + spec.frame_size;
    ensure_shape!(
        original_length <= total,
        "original length {original_length} exceeds the {total} samples covered by {} frames",
        shape[2]
    );
    Ok(())
}

/// Inverse of [`segment`] for `[1, 1, N, F]` frames: coverage-normalized
/// overlap-add trimmed to `original_length`.
pub fn overlap_add<T: Real>(
    frames: &FrameTensor<T>,
    spec: &FramingSpec,
    original_length: usize,
) -> Result<Vec<T>> {
    let shape = frames.tensor().shape();
    check_frames(shape, spec, original_length)?;
    ensure_shape!(shape[0] == 1, "overlap_add takes a single item, got batch {}", shape[0]);
    Ok(overlap_add_rows(frames.tensor().data(), shape[2], spec, original_length))
}

fn overlap_add_rows<T: Real>(frames: &[T], n: usize, spec: &FramingSpec, len: usize) -> Vec<T> {
    let (f, s) = (spec.frame_size, spec.stride());
    let cover = spec.coverage(n);
    // f64 accumulation keeps heavily overlapped f32 sums exact enough
    let mut acc = vec![0.0f64; cover.len()];
    for (i, frame) in frames.chunks(f).take(n).enumerate() {
        for (o, &v) in acc[i * s..i * s + f].iter_mut().zip(frame) {
            *o += v.as_f64();
        }
    }
    acc.iter().zip(&cover).take(len).map(|(&o, &c)| T::lit(o / c as f64)).collect()
}

impl<T: Real> Graph<T> {
    /// Differentiable overlap-add of `[B, 1, N, F]` frames into `[B, len]`.
    pub fn overlap_add(&mut self, frames: Var, spec: FramingSpec, len: usize) -> Result<Var> {
        let shape = self.shape(frames).to_vec();
        check_frames(&shape, &spec, len)?;
        let (b, n, f) = (shape[0], shape[2], shape[3]);
        let mut data = Vec::with_capacity(b * len);
        for item in self.value(frames).data().chunks(n * f) {
            data.extend(overlap_add_rows(item, n, &spec, len));
        }
        let out = Tensor::new(&[b, len], data)?;
        Ok(self.record(out, &[frames], move |ctx| {
            let s = spec.stride();
            let cover = spec.coverage(n);
            let mut g = vec![T::zero(); b * n * f];
            for bi in 0..b {
                let go = &ctx.grad[bi * len..(bi + 1) * len];
                for i in 0..n {
                    for k in 0..f {
                        let p = i * s + k;
                        if p < len {
                            g[(bi * n + i) * f + k] = go[p] / T::usize(cover[p] as usize);
                        }
                    }
                }
            }
            vec![Some(g)]
        }))
    }
}
