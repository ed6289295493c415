//! Parameterized building blocks recorded onto a [`Graph`].

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamRegistry};
use crate::error::Result;
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Relu,
    Tanh,
}

fn activate<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, act: Activation) -> NodeId {
    match act {
        Activation::Silu => g.silu(x),
        Activation::Relu => g.relu(x),
        Activation::Tanh => g.tanh(x),
    }
}

/// Affine map `x W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new<T: Scalar>(
        reg: &mut ParamRegistry<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = reg.glorot(&format!("{name}.w"), fan_in, fan_out, rng)?;
        let b = reg.zeros(&format!("{name}.b"), &[fan_out])?;
        Ok(Self { w, b, fan_in, fan_out })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_bias(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(reg: &mut ParamRegistry<T>, name: &str, dim: usize) -> Result<Self> {
        let gain = reg.ones(&format!("{name}.gain"), &[dim])?;
        let bias = reg.zeros(&format!("{name}.bias"), &[dim])?;
        Ok(Self { gain, bias })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Stack of dense layers with an activation between consecutive layers and
/// a linear final layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub act: Activation,
}

impl Mlp {
    pub fn new<T: Scalar>(
        reg: &mut ParamRegistry<T>,
        name: &str,
        sizes: &[usize],
        act: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        assert!(sizes.len() >= 2, "mlp needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(reg, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, act })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i + 1 < self.layers.len() {
                h = activate(g, h, self.act);
            }
        }
        h
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }
}

/// Multi-head self-attention over `[batch*seq, dim]` token rows.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub qkv: Dense,
    pub proj: Dense,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        reg: &mut ParamRegistry<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let qkv = Dense::new(reg, &format!("{name}.qkv"), dim, 3 * dim, rng)?;
        let proj = Dense::new(reg, &format!("{name}.proj"), dim, dim, rng)?;
        Ok(Self { qkv, proj, heads })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId, batch: usize, seq: usize) -> NodeId {
        let qkv = self.qkv.forward(g, x);
        let a = g.attention(qkv, batch, seq, self.heads);
        self.proj.forward(g, a)
    }
}

/// Pre-norm transformer block: attention and a two-layer SiLU MLP, each
/// wrapped in a residual connection.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new<T: Scalar>(
        reg: &mut ParamRegistry<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(reg, &format!("{name}.ln1"), dim)?,
            attn: MultiHeadAttention::new(reg, &format!("{name}.attn"), dim, heads, rng)?,
            ln2: LayerNorm::new(reg, &format!("{name}.ln2"), dim)?,
            mlp: Mlp::new(reg, &format!("{name}.mlp"), &[dim, 2 * dim, dim], Activation::Silu, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId, batch: usize, seq: usize) -> NodeId {
        let h = self.ln1.forward(g, x);
        let h = self.attn.forward(g, h, batch, seq);
        let x = g.add(x, h);
        let h = self.ln2.forward(g, x);
        let h = self.mlp.forward(g, h);
        g.add(x, h)
    }
}

/// Sinusoidal features of a scalar per row: `[sin(x ω_i), cos(x ω_i)]` with
/// `ω_i = 10000^{-i/(dim/2)}`.
pub fn sinusoidal<T: Scalar>(xs: &[f64], dim: usize) -> super::Tensor<T> {
    assert!(dim >= 2 && dim.is_multiple_of(2), "sinusoidal dim must be even");
    let half = dim / 2;
    let mut out = Vec::with_capacity(xs.len() * dim);
    for &x in xs {
        for i in 0..half {
            let w = (-(i as f64) / half as f64 * 10000f64.ln()).exp();
            out.push(T::lit((x * w).sin()));
        }
        for i in 0..half {
            let w = (-(i as f64) / half as f64 * 10000f64.ln()).exp();
            out.push(T::lit((x * w).cos()));
        }
    }
    super::Tensor::from_vec(xs.len(), dim, out)
}
