//! Encoder, masking module and decoder.

use crate::autodiff::{Conv2dOpts, Graph, Padding, Var};
use crate::error::{ensure_shape, Error, Result};
use crate::layers::{Conv2d, LayerNorm, ParamBuilder, PRelu};
use crate::tensor::Real;

/// conv -> LayerNorm over F -> PReLU.
#[derive(Clone, Debug)]
pub struct ConvNormAct {
    pub conv: Conv2d,
    pub norm: LayerNorm,
    pub act: PRelu,
}

impl ConvNormAct {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        b: &mut ParamBuilder<T>,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        opts: Conv2dOpts,
        width: usize,
        prelu_init: f64,
        eps: f64,
    ) -> Result<Self> {
        Ok(ConvNormAct {
            conv: Conv2d::new(&mut b.sub("conv"), cin, cout, kernel, opts)?,
            norm: LayerNorm::new(&mut b.sub("norm"), width, eps)?,
            act: PRelu::new(&mut b.sub("prelu"), cout, prelu_init)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = self.norm.forward(g, y)?;
        self.act.forward(g, y)
    }
}

/// Densely connected dilated convolutions: layer `i` sees the block input
/// and every earlier layer output concatenated on the channel axis.
/// Kernel (2, 3), dilation `d_i` on N with causal padding, SAME on F.
#[derive(Clone, Debug)]
pub struct DilatedDenseBlock {
    pub layers: Vec<ConvNormAct>,
    pub channels: usize,
}

impl DilatedDenseBlock {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<T>,
        channels: usize,
        dilations: &[usize],
        width: usize,
        prelu_init: f64,
        eps: f64,
    ) -> Result<Self> {
        let layers = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let opts = Conv2dOpts {
                    dilation: (d, 1),
                    ..Conv2dOpts::padded(Padding::CausalN)
                };
                let mut lb = b.sub(&format!("layer{i}"));
                ConvNormAct::new(&mut lb, channels * (i + 1), channels, (2, 3), opts, width, prelu_init, eps)
            })
            .collect::<Result<_>>()?;
        Ok(DilatedDenseBlock { layers, channels })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut seen = vec![x];
        let mut out = x;
        for layer in &self.layers {
            let input = if seen.len() == 1 { x } else { g.concat(&seen, 1)? };
            out = layer.forward(g, input)?;
            seen.push(out);
        }
        Ok(out)
    }
}

/// `[B, 1, N, F]` -> `[B, C, N, F/2]`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub input: ConvNormAct,
    pub dense: DilatedDenseBlock,
    pub down: ConvNormAct,
    pub frame_size: usize,
}

impl Encoder {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<T>,
        channels: usize,
        frame_size: usize,
        dilations: &[usize],
        prelu_init: f64,
        eps: f64,
    ) -> Result<Self> {
        if !frame_size.is_multiple_of(2) {
            return Err(Error::config("frame_size", format!("{frame_size} is odd")));
        }
        let down = Conv2dOpts {
            stride: (1, 2),
            dilation: (1, 1),
            padding: Padding::Explicit(0, 0, 1, 1),
        };
        Ok(Encoder {
            input: ConvNormAct::new(
                &mut b.sub("input"),
                1,
                channels,
                (1, 1),
                Conv2dOpts::default(),
                frame_size,
                prelu_init,
                eps,
            )?,
            dense: DilatedDenseBlock::new(&mut b.sub("dense"), channels, dilations, frame_size, prelu_init, eps)?,
            down: ConvNormAct::new(&mut b.sub("down"), channels, channels, (1, 3), down, frame_size / 2, prelu_init, eps)?,
            frame_size,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        ensure_shape!(
            s.len() == 4 && s[1] == 1 && s[3] == self.frame_size,
            "encoder needs [B, 1, N, {}], got {s:?}",
            self.frame_size
        );
        let y = self.input.forward(g, x)?;
        let y = self.dense.forward(g, y)?;
        self.down.forward(g, y)
    }
}

/// Channel-halving 1x1 convolution and PReLU in front of the transformer.
#[derive(Clone, Debug)]
pub struct InputProjection {
    pub conv: Conv2d,
    pub act: PRelu,
}

impl InputProjection {
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, cin: usize, cout: usize, prelu_init: f64) -> Result<Self> {
        Ok(InputProjection {
            conv: Conv2d::pointwise(&mut b.sub("conv"), cin, cout)?,
            act: PRelu::new(&mut b.sub("prelu"), cout, prelu_init)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        self.act.forward(g, y)
    }
}

#[derive(Clone, Debug)]
pub struct Masking {
    pub act: PRelu,
    pub expand: Conv2d,
    pub tanh_path: Conv2d,
    pub sigmoid_path: Conv2d,
    pub out: Conv2d,
}

impl Masking {
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, tstm_channels: usize, channels: usize, prelu_init: f64) -> Result<Self> {
        Ok(Masking {
            act: PRelu::new(&mut b.sub("prelu"), tstm_channels, prelu_init)?,
            expand: Conv2d::pointwise(&mut b.sub("expand"), tstm_channels, channels)?,
            tanh_path: Conv2d::pointwise(&mut b.sub("tanh_path"), channels, channels)?,
            sigmoid_path: Conv2d::pointwise(&mut b.sub("sigmoid_path"), channels, channels)?,
            out: Conv2d::pointwise(&mut b.sub("out"), channels, channels)?,
        })
    }

    /// The non-negative mask computed from the transformer output.
    pub fn mask<T: Real>(&self, g: &mut Graph<T>, t: Var) -> Result<Var> {
        let y = self.act.forward(g, t)?;
        let y = self.expand.forward(g, y)?;
        let a = self.tanh_path.forward(g, y)?;
        let a = g.tanh(a);
        let b = self.sigmoid_path.forward(g, y)?;
        let b = g.sigmoid(b);
        let gated = g.mul(a, b)?;
        let m = self.out.forward(g, gated)?;
        Ok(g.relu(m))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, t: Var, encoded: Var) -> Result<Var> {
        let m = self.mask(g, t)?;
        ensure_shape!(
            g.shape(m) == g.shape(encoded),
            "mask {:?} does not match encoder output {:?}",
            g.shape(m),
            g.shape(encoded)
        );
        g.mul(m, encoded)
    }
}

/// `[B, C, N, F/2]` -> `[B, 1, N, F]`.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub dense: DilatedDenseBlock,
    pub expand: Conv2d,
    pub out: Conv2d,
    pub channels: usize,
}

impl Decoder {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<T>,
        channels: usize,
        frame_size: usize,
        dilations: &[usize],
        prelu_init: f64,
        eps: f64,
    ) -> Result<Self> {
        Ok(Decoder {
            dense: DilatedDenseBlock::new(&mut b.sub("dense"), channels, dilations, frame_size / 2, prelu_init, eps)?,
            expand: Conv2d::pointwise(&mut b.sub("expand"), channels, 2 * channels)?,
            out: Conv2d::pointwise(&mut b.sub("out"), channels, 1)?,
            channels,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        ensure_shape!(
            s.len() == 4 && s[1] == self.channels,
            "decoder needs [B, {}, N, F/2], got {s:?}",
            self.channels
        );
        let y = self.dense.forward(g, x)?;
        let y = self.expand.forward(g, y)?;
        let y = g.subpixel_shuffle_f(y, 2)?;
        self.out.forward(g, y)
    }
}
