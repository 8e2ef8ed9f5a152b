//! The full TSTNN: segmentation, encoder, two-stage transformer, masking,
//! decoder and overlap-add.

mod blocks;
mod checkpoint;

pub use blocks::{ConvNormAct, Decoder, DilatedDenseBlock, Encoder, InputProjection, Masking};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

use std::fmt;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::config::ModelConfig;
use crate::error::{ensure_shape, Error, Result};
use crate::framing::{segment_batch, AudioBuffer};
use crate::layers::{init_rng, ParamBuilder};
use crate::tensor::Real;
use crate::transformer::Tstm;

/// Named intermediate shapes recorded by [`Tstnn::forward_frames`].
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

#[derive(Clone, Debug)]
pub struct Tstnn<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub projection: InputProjection,
    pub tstm: Tstm,
    pub masking: Masking,
    pub decoder: Decoder,
}

impl<T: Real> Tstnn<T> {
    /// Builds a model with seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let mut rng = init_rng(seed);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let (eps, a) = (c.norm_eps, c.prelu_init);
        let encoder = Encoder::new(&mut b.sub("encoder"), c.encoder_channels, c.frame_size, &c.ddb_dilations, a, eps)?;
        let projection = InputProjection::new(&mut b.sub("projection"), c.encoder_channels, c.tstm_channels, a)?;
        let tstm = Tstm::new(
            &mut b.sub("tstm"),
            c.n_blocks,
            c.tstm_channels,
            c.n_heads,
            c.attention_scale,
            c.bidirectional_gru,
            eps,
        )?;
        let masking = Masking::new(&mut b.sub("masking"), c.tstm_channels, c.encoder_channels, a)?;
        let decoder = Decoder::new(&mut b.sub("decoder"), c.encoder_channels, c.frame_size, &c.ddb_dilations, a, eps)?;
        Ok(Tstnn {
            config,
            store,
            encoder,
            projection,
            tstm,
            masking,
            decoder,
        })
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Tstnn<U> {
        Tstnn {
            config: self.config.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            projection: self.projection.clone(),
            tstm: self.tstm.clone(),
            masking: self.masking.clone(),
            decoder: self.decoder.clone(),
        }
    }

    /// `[B, 1, N, F]` frames -> enhanced `[B, 1, N, F]` frames.
    pub fn forward_frames(&self, g: &mut Graph<T>, frames: Var) -> Result<(Var, ShapeTrace)> {
        let mut trace = ShapeTrace::new();
        let mut note = |g: &Graph<T>, name: &str, v: Var| trace.push((name.to_string(), g.shape(v).to_vec()));
        note(g, "input", frames);
        let encoded = self.encoder.forward(g, frames)?;
        note(g, "encoder", encoded);
        let mut t = self.projection.forward(g, encoded)?;
        note(g, "projection", t);
        for (i, block) in self.tstm.blocks.iter().enumerate() {
            t = block.forward(g, t)?;
            note(g, &format!("tstm.block{i}"), t);
        }
        let masked = self.masking.forward(g, t, encoded)?;
        note(g, "masking", masked);
        let out = self.decoder.forward(g, masked)?;
        note(g, "decoder", out);
        Ok((out, trace))
    }

    /// Enhances a batch of equal-length waveforms, returning `[B, L]`.
    pub fn forward_waveforms(&self, g: &mut Graph<T>, batch: &[Vec<T>]) -> Result<Var> {
        let spec = self.config.framing();
        let len = batch.first().map_or(0, Vec::len);
        ensure_shape!(len > 0, "empty waveform batch");
        let frames = segment_batch(batch, &spec)?.into_tensor();
        let frames = g.constant(frames);
        let (out, _) = self.forward_frames(g, frames)?;
        g.overlap_add(out, spec, len)
    }

    /// Denoises one clip; the output has the input's length and rate.
    pub fn enhance(&self, noisy: &AudioBuffer) -> Result<AudioBuffer> {
        if noisy.sample_rate != self.config.sample_rate {
            return Err(Error::config(
                "sample_rate",
                format!("input is {} Hz, model expects {} Hz", noisy.sample_rate, self.config.sample_rate),
            ));
        }
        ensure_shape!(!noisy.is_empty(), "cannot enhance an empty clip");
        let mut g = Graph::inference(&self.store);
        let x: Vec<T> = noisy.samples.iter().map(|&s| T::lit(s as f64)).collect();
        let y = self.forward_waveforms(&mut g, &[x])?;
        let samples = g.value(y).data().iter().map(|v| v.as_f64() as f32).collect();
        AudioBuffer::new(samples, noisy.sample_rate)
    }

    pub fn param_count(&self) -> ParamCount {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for id in self.store.ids() {
            let name = self.store.name(id);
            let group = match name.split('.').collect::<Vec<_>>().as_slice() {
                ["tstm", block, ..] => format!("tstm.{block}"),
                [head, ..] => head.to_string(),
                [] => String::new(),
            };
            let n = self.store.value(id).len();
            match groups.iter_mut().find(|(g, _)| *g == group) {
                Some((_, c)) => *c += n,
                None => groups.push((group, n)),
            }
        }
        ParamCount {
            total: self.store.numel(),
            groups,
        }
    }
}

/// Total scalar parameter count with a per-submodule breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCount {
    pub total: usize,
    pub groups: Vec<(String, usize)>,
}

impl fmt::Display for ParamCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, n) in &self.groups {
            writeln!(f, "{name:<16}{n:>10}")?;
        }
        write!(f, "{:<16}{:>10}  ({:.3} M)", "total", self.total, self.total as f64 / 1e6)
    }
}
