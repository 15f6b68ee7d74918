//! Transformer blocks under adaptive RMS normalization.
//!
//! Both block forms share parameters and arithmetic: a single linear map
//! turns the condition into six modulation tensors
//! `(gamma1, beta1, alpha1, gamma2, beta2, alpha2)`, and
//!
//! ```text
//! h' = h  + alpha1 ⊙ Attn((1 + gamma1) ⊙ RMSNorm(h)  + beta1)
//! o  = h' + alpha2 ⊙ MLP ((1 + gamma2) ⊙ RMSNorm(h') + beta2)
//! ```
//!
//! [`just_pixel_adaln_block`] takes a per-token condition `[N, D]`, so every
//! token gets its own modulation. [`global_adaln_block`] takes one `[1, D]`
//! vector and broadcasts the same six vectors over all tokens.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{self, init_attention, init_linear, init_mlp, AttentionConfig, Init};
use crate::nn::{Graph, ParamStore, Var};
use crate::scalar::Scalar;

/// The six modulation tensors of one block, in output-column order.
#[derive(Debug, Clone, Copy)]
pub struct Modulation {
    pub gamma1: Var,
    pub beta1: Var,
    pub alpha1: Var,
    pub gamma2: Var,
    pub beta2: Var,
    pub alpha2: Var,
}

/// Registers one block; the modulation map is zero-initialized.
pub fn init_block<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    dim: usize,
    mlp_ratio: usize,
    rng: &mut R,
) -> Result<()> {
    init_linear(store, &format!("{prefix}.mod"), dim, 6 * dim, true, Init::Zeros, rng)?;
    init_attention(store, &format!("{prefix}.attn"), dim, rng)?;
    init_mlp(store, &format!("{prefix}.mlp"), dim, mlp_ratio, rng)
}

/// `Linear(c)` split into six `[rows, D]` tensors.
pub fn modulation<T: Scalar>(g: &mut Graph<'_, T>, c: Var, prefix: &str) -> Result<Modulation> {
    let d = g.value(c).last_dim();
    let m = layers::linear(g, c, &format!("{prefix}.mod"))?;
    let mut parts = [m; 6];
    for (i, p) in parts.iter_mut().enumerate() {
        *p = g.slice_cols(m, i * d, d)?;
    }
    let [gamma1, beta1, alpha1, gamma2, beta2, alpha2] = parts;
    Ok(Modulation {
        gamma1,
        beta1,
        alpha1,
        gamma2,
        beta2,
        alpha2,
    })
}

/// `(1 + gamma) ⊙ RMSNorm(h) + beta` with per-token `gamma`, `beta`.
pub fn modulate<T: Scalar>(g: &mut Graph<'_, T>, h: Var, gamma: Var, beta: Var) -> Result<Var> {
    let n = g.rms_norm(h, None)?;
    let s = g.add_scalar(gamma, T::one());
    let a = g.mul(n, s)?;
    g.add(a, beta)
}

fn modulate_global<T: Scalar>(g: &mut Graph<'_, T>, h: Var, gamma: Var, beta: Var) -> Result<Var> {
    let n = g.rms_norm(h, None)?;
    let s = g.add_scalar(gamma, T::one());
    let a = g.mul_row(n, s)?;
    g.add_row(a, beta)
}

fn check_condition<T: Scalar>(g: &Graph<'_, T>, h: Var, c: Var, rows: Option<usize>) -> Result<()> {
    let (n, d) = g.value(h).dims2()?;
    let (cn, cd) = g.value(c).dims2()?;
    let want = rows.unwrap_or(n);
    if cd != d || cn != want {
        return Err(Error::shape(&[want, d], &[cn, cd]));
    }
    Ok(())
}

/// Block with a spatially varying condition `c_s: [N, D]`.
pub fn just_pixel_adaln_block<T: Scalar>(
    g: &mut Graph<'_, T>,
    h: Var,
    c_s: Var,
    prefix: &str,
    cfg: &AttentionConfig,
) -> Result<Var> {
    check_condition(g, h, c_s, None)?;
    let m = modulation(g, c_s, prefix)?;
    let a = modulate(g, h, m.gamma1, m.beta1)?;
    let a = layers::self_attention(g, a, &format!("{prefix}.attn"), cfg)?;
    let a = g.mul(m.alpha1, a)?;
    let h1 = g.add(h, a)?;
    let b = modulate(g, h1, m.gamma2, m.beta2)?;
    let b = layers::mlp(g, b, &format!("{prefix}.mlp"))?;
    let b = g.mul(m.alpha2, b)?;
    g.add(h1, b)
}

/// Block with one global condition vector `c: [1, D]`.
pub fn global_adaln_block<T: Scalar>(
    g: &mut Graph<'_, T>,
    h: Var,
    c: Var,
    prefix: &str,
    cfg: &AttentionConfig,
) -> Result<Var> {
    check_condition(g, h, c, Some(1))?;
    let m = modulation(g, c, prefix)?;
    let a = modulate_global(g, h, m.gamma1, m.beta1)?;
    let a = layers::self_attention(g, a, &format!("{prefix}.attn"), cfg)?;
    let a = g.mul_row(a, m.alpha1)?;
    let h1 = g.add(h, a)?;
    let b = modulate_global(g, h1, m.gamma2, m.beta2)?;
    let b = layers::mlp(g, b, &format!("{prefix}.mlp"))?;
    let b = g.mul_row(b, m.alpha2)?;
    g.add(h1, b)
}
