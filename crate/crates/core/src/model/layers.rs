//! Parameterised building blocks shared by every model component.

use jointdrive_numerics::{Conv2dSpec, Graph, GruVars, ParamId, ParamStore, Tensor, Var};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Registers parameters with a per-name deterministic RNG, so a parameter's
/// initial value depends only on (seed, name) and not on build order.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    seed: u64,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Init { store, seed }
    }

    fn rng(&self, name: &str) -> ChaCha8Rng {
        let digest = Sha256::digest(name.as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(self.seed ^ u64::from_le_bytes(bytes))
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let t = Tensor::uniform(shape, bound, &mut self.rng(name));
        Ok(self.store.add(name, t)?)
    }

    pub fn tensor(&mut self, name: &str, t: Tensor) -> Result<ParamId> {
        Ok(self.store.add(name, t)?)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.tensor(name, Tensor::zeros(shape))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// Uniform in ±sqrt(1/fan_in) for weight and bias.
    FanIn,
    Zero,
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, fan_in: usize, fan_out: usize, kind: InitKind) -> Result<Self> {
        let bound = (1.0 / fan_in as f64).sqrt();
        Ok(match kind {
            InitKind::FanIn => Linear {
                w: init.uniform(&format!("{name}.w"), &[fan_in, fan_out], bound)?,
                b: Some(init.uniform(&format!("{name}.b"), &[fan_out], bound)?),
            },
            InitKind::Zero => Linear {
                w: init.zeros(&format!("{name}.w"), &[fan_in, fan_out])?,
                b: Some(init.zeros(&format!("{name}.b"), &[fan_out])?),
            },
        })
    }

    /// Fan-in initialised weight without a bias.
    pub fn without_bias(init: &mut Init, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let bound = (1.0 / fan_in as f64).sqrt();
        Ok(Linear {
            w: init.uniform(&format!("{name}.w"), &[fan_in, fan_out], bound)?,
            b: None,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        Ok(g.linear(x, w, b)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: Conv2dSpec,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        spec: Conv2dSpec,
        kind: InitKind,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let bound = (1.0 / fan_in as f64).sqrt();
        let shape = [out_ch, in_ch, kernel, kernel];
        Ok(match kind {
            InitKind::FanIn => Conv {
                w: init.uniform(&format!("{name}.w"), &shape, bound)?,
                b: init.uniform(&format!("{name}.b"), &[out_ch], bound)?,
                spec,
            },
            InitKind::Zero => Conv {
                w: init.zeros(&format!("{name}.w"), &shape)?,
                b: init.zeros(&format!("{name}.b"), &[out_ch])?,
                spec,
            },
        })
    }

    /// 1×1 convolution initialised to the identity map.
    pub fn identity(init: &mut Init, name: &str, ch: usize) -> Result<Self> {
        let w = Tensor::from_fn(&[ch, ch, 1, 1], |i| if i / ch == i % ch { 1.0 } else { 0.0 });
        Ok(Conv {
            w: init.tensor(&format!("{name}.w"), w)?,
            b: init.zeros(&format!("{name}.b"), &[ch])?,
            spec: Conv2dSpec::default(),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        Ok(g.conv2d(x, w, Some(b), self.spec)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(init: &mut Init, name: &str, d: usize) -> Result<Self> {
        Ok(Norm {
            gamma: init.tensor(&format!("{name}.gamma"), Tensor::full(&[d], 1.0))?,
            beta: init.zeros(&format!("{name}.beta"), &[d])?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (gm, bt) = (g.param(self.gamma), g.param(self.beta));
        Ok(g.layer_norm(x, gm, bt)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl Gru {
    /// Standard recurrent init: every tensor uniform in ±1/sqrt(hidden).
    pub fn new(init: &mut Init, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let k = 1.0 / (hidden as f64).sqrt();
        Ok(Gru {
            w_ih: init.uniform(&format!("{name}.w_ih"), &[input, 3 * hidden], k)?,
            w_hh: init.uniform(&format!("{name}.w_hh"), &[hidden, 3 * hidden], k)?,
            b_ih: init.uniform(&format!("{name}.b_ih"), &[3 * hidden], k)?,
            b_hh: init.uniform(&format!("{name}.b_hh"), &[3 * hidden], k)?,
            hidden,
        })
    }

    pub fn step(&self, g: &mut Graph<'_>, x: Var, h: Var) -> Result<Var> {
        let w = GruVars {
            w_ih: g.param(self.w_ih),
            w_hh: g.param(self.w_hh),
            b_ih: g.param(self.b_ih),
            b_hh: g.param(self.b_hh),
        };
        Ok(g.gru_cell(x, h, w)?)
    }
}

/// Multi-head self-attention with separate query/key/value/output projections.
/// The key projection has no bias: it would add the same amount to every
/// score of a query row, which the softmax cancels.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    /// `x: [B, S, d]`. `mask` is an additive per-key offset shared by all
    /// queries and batch entries. Returns the output and the `[B, h, S, S]`
    /// attention probabilities.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, mask: Option<&[f64]>) -> Result<(Var, Var)> {
        let shape = g.shape(x).to_vec();
        let (b, s, d) = (shape[0], shape[1], shape[2]);
        let h = self.heads;
        let dh = d / h;
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, x)?;
        let v = self.v.forward(g, x)?;
        let q = g.reshape(q, &[b, s, h, dh])?;
        let q = g.permute(q, &[0, 2, 1, 3])?;
        let k = g.reshape(k, &[b, s, h, dh])?;
        let kt = g.permute(k, &[0, 2, 3, 1])?;
        let v = g.reshape(v, &[b, s, h, dh])?;
        let v = g.permute(v, &[0, 2, 1, 3])?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let probs = g.softmax(scores, mask)?;
        let ctx = g.matmul(probs, v)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, s, d])?;
        Ok((self.o.forward(g, ctx)?, probs))
    }
}

/// Pre-norm transformer encoder layer: attention and a ReLU feed-forward
/// block, each wrapped in a residual connection.
#[derive(Clone, Copy, Debug)]
pub struct EncoderLayer {
    pub ln1: Norm,
    pub attn: Attention,
    pub ln2: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new(init: &mut Init, name: &str, d: usize, layers: usize, heads: usize, ffn_mult: usize) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| {
                let p = format!("{name}.layers.{l}");
                Ok(EncoderLayer {
                    ln1: Norm::new(init, &format!("{p}.ln1"), d)?,
                    attn: Attention {
                        q: Linear::new(init, &format!("{p}.attn.q"), d, d, InitKind::FanIn)?,
                        k: Linear::without_bias(init, &format!("{p}.attn.k"), d, d)?,
                        v: Linear::new(init, &format!("{p}.attn.v"), d, d, InitKind::FanIn)?,
                        o: Linear::new(init, &format!("{p}.attn.o"), d, d, InitKind::FanIn)?,
                        heads,
                    },
                    ln2: Norm::new(init, &format!("{p}.ln2"), d)?,
                    ff1: Linear::new(init, &format!("{p}.ff1"), d, ffn_mult * d, InitKind::FanIn)?,
                    ff2: Linear::new(init, &format!("{p}.ff2"), ffn_mult * d, d, InitKind::FanIn)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Encoder { layers })
    }

    /// Runs every layer on `x: [B, S, d]`; returns the output and, per layer,
    /// the attention probabilities node.
    pub fn forward(&self, g: &mut Graph<'_>, mut x: Var, mask: Option<&[f64]>) -> Result<(Var, Vec<Var>)> {
        let mut probs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let n = layer.ln1.forward(g, x)?;
            let (a, p) = layer.attn.forward(g, n, mask)?;
            probs.push(p);
            x = g.add(x, a)?;
            let n = layer.ln2.forward(g, x)?;
            let hdn = layer.ff1.forward(g, n)?;
            let hdn = g.relu(hdn);
            let f = layer.ff2.forward(g, hdn)?;
            x = g.add(x, f)?;
        }
        Ok((x, probs))
    }
}
