//! Parameterized building blocks shared by the transformer and the model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Conv2dOpts, Graph, GruVars, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Registers parameters under a dotted name prefix with seeded initialization.
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)));
        self.store.register(self.full_name(name), t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], v: f64) -> Result<ParamId> {
        self.store.register(self.full_name(name), Tensor::full(shape, T::lit(v)))
    }
}

/// Seeded RNG for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    /// `[din, dout]` weight, uniform in ±sqrt(1/din).
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, din: usize, dout: usize, bias: bool) -> Result<Self> {
        let bound = (1.0 / din as f64).sqrt();
        Ok(Linear {
            weight: b.uniform("weight", &[din, dout], bound)?,
            bias: if bias { Some(b.uniform("bias", &[dout], bound)?) } else { None },
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub opts: Conv2dOpts,
}

impl Conv2d {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<T>,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        opts: Conv2dOpts,
    ) -> Result<Self> {
        let bound = (1.0 / (cin * kernel.0 * kernel.1) as f64).sqrt();
        Ok(Conv2d {
            weight: b.uniform("weight", &[cout, cin, kernel.0, kernel.1], bound)?,
            bias: b.uniform("bias", &[cout], bound)?,
            opts,
        })
    }

    /// 1x1 convolution.
    pub fn pointwise<T: Real>(b: &mut ParamBuilder<T>, cin: usize, cout: usize) -> Result<Self> {
        Self::new(b, cin, cout, (1, 1), Conv2dOpts::default())
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, Some(b), self.opts)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, dim: usize, eps: f64) -> Result<Self> {
        Ok(LayerNorm {
            gamma: b.constant("gamma", &[dim], 1.0)?,
            beta: b.constant("beta", &[dim], 0.0)?,
            eps,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (gm, bt) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gm, bt, T::lit(self.eps))
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, groups: usize, channels: usize, eps: f64) -> Result<Self> {
        Ok(GroupNorm {
            gamma: b.constant("gamma", &[channels], 1.0)?,
            beta: b.constant("beta", &[channels], 0.0)?,
            groups,
            eps,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (gm, bt) = (g.param(self.gamma), g.param(self.beta));
        g.group_norm(x, self.groups, gm, bt, T::lit(self.eps))
    }
}

/// Per-channel PReLU on axis 1 of `[B, C, N, F]`.
#[derive(Clone, Debug)]
pub struct PRelu {
    pub slope: ParamId,
}

impl PRelu {
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, channels: usize, init: f64) -> Result<Self> {
        Ok(PRelu {
            slope: b.constant("slope", &[channels], init)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let a = g.param(self.slope);
        g.prelu(x, a, 1)
    }
}

#[derive(Clone, Debug)]
pub struct GruDirection {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

#[derive(Clone, Debug)]
pub struct Gru {
    pub forward: GruDirection,
    pub backward: Option<GruDirection>,
    pub hidden: usize,
}

impl Gru {
    /// All weights uniform in ±sqrt(1/hidden).
    pub fn new<T: Real>(b: &mut ParamBuilder<T>, input: usize, hidden: usize, bidirectional: bool) -> Result<Self> {
        let bound = (1.0 / hidden as f64).sqrt();
        let dir = |b: &mut ParamBuilder<T>, name: &str| -> Result<GruDirection> {
            let mut b = b.sub(name);
            Ok(GruDirection {
                w_ih: b.uniform("w_ih", &[3 * hidden, input], bound)?,
                w_hh: b.uniform("w_hh", &[3 * hidden, hidden], bound)?,
                b_ih: b.uniform("b_ih", &[3 * hidden], bound)?,
                b_hh: b.uniform("b_hh", &[3 * hidden], bound)?,
            })
        };
        let forward = dir(b, "fwd")?;
        let backward = if bidirectional { Some(dir(b, "bwd")?) } else { None };
        Ok(Gru {
            forward,
            backward,
            hidden,
        })
    }

    pub fn output_width(&self) -> usize {
        self.hidden * if self.backward.is_some() { 2 } else { 1 }
    }

    /// `x: [S, B, I]` -> `[S, B, H * dirs]` from a zero initial state.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let vars = |g: &mut Graph<T>, d: &GruDirection| GruVars {
            w_ih: g.param(d.w_ih),
            w_hh: g.param(d.w_hh),
            b_ih: g.param(d.b_ih),
            b_hh: g.param(d.b_hh),
        };
        let f = vars(g, &self.forward);
        let b = self.backward.as_ref().map(|d| vars(g, d));
        g.gru(x, None, f, b)
    }
}
