//! Named-parameter layers recorded onto a [`Graph`].
//!
//! Each layer reads its weights from the graph's [`ParamStore`] under a
//! name prefix, e.g. `blocks.00.attn.qkv.weight`. The matching `init_*`
//! functions create those entries.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{trunc_normal, ParamStore, INIT_STD};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Width, head count and depth of a transformer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub hidden_dim: usize,
    pub heads: usize,
    pub depth: usize,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.heads == 0 || self.depth == 0 {
            return Err(Error::InvalidArgument(format!("non-positive attention config {self:?}")));
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(Error::Dimension(format!(
                "hidden_dim {} not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// How a linear layer's weight is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
}

pub fn init_linear<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    bias: bool,
    init: Init,
    rng: &mut R,
) -> Result<()> {
    let w = match init {
        Init::TruncNormal => trunc_normal(&[d_in, d_out], INIT_STD, rng),
        Init::Zeros => Tensor::zeros(&[d_in, d_out]),
    };
    store.insert(format!("{prefix}.weight"), w)?;
    if bias {
        store.insert(format!("{prefix}.bias"), Tensor::zeros(&[d_out]))?;
    }
    Ok(())
}

/// Applies `{prefix}.weight` and, when present, `{prefix}.bias`.
pub fn linear<T: Scalar>(g: &mut Graph<'_, T>, x: Var, prefix: &str) -> Result<Var> {
    let w = g.param(&format!("{prefix}.weight"))?;
    let bias_name = format!("{prefix}.bias");
    let b = if g.has_param(&bias_name) {
        Some(g.param(&bias_name)?)
    } else {
        None
    };
    g.linear(x, w, b)
}

pub fn init_attention<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    dim: usize,
    rng: &mut R,
) -> Result<()> {
    init_linear(store, &format!("{prefix}.qkv"), dim, 3 * dim, true, Init::TruncNormal, rng)?;
    init_linear(store, &format!("{prefix}.out"), dim, dim, true, Init::TruncNormal, rng)
}

/// Fused QKV projection, unmasked multi-head attention, output projection.
pub fn self_attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    h: Var,
    prefix: &str,
    cfg: &AttentionConfig,
) -> Result<Var> {
    let d = cfg.hidden_dim;
    let (_, width) = g.value(h).dims2()?;
    if width != d {
        return Err(Error::Dimension(format!("attention input width {width}, config {d}")));
    }
    let qkv = linear(g, h, &format!("{prefix}.qkv"))?;
    let q = g.slice_cols(qkv, 0, d)?;
    let k = g.slice_cols(qkv, d, d)?;
    let v = g.slice_cols(qkv, 2 * d, d)?;
    let a = g.attention(q, k, v, cfg.heads)?;
    linear(g, a, &format!("{prefix}.out"))
}

pub fn init_mlp<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    dim: usize,
    ratio: usize,
    rng: &mut R,
) -> Result<()> {
    init_linear(store, &format!("{prefix}.fc1"), dim, ratio * dim, true, Init::TruncNormal, rng)?;
    init_linear(store, &format!("{prefix}.fc2"), ratio * dim, dim, true, Init::TruncNormal, rng)
}

/// `fc2(gelu(fc1(h)))`.
pub fn mlp<T: Scalar>(g: &mut Graph<'_, T>, h: Var, prefix: &str) -> Result<Var> {
    let a = linear(g, h, &format!("{prefix}.fc1"))?;
    let a = g.gelu(a);
    linear(g, a, &format!("{prefix}.fc2"))
}
