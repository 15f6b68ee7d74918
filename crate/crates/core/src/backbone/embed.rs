//! Time/class conditioning `e(t, y)` and the spatial condition `c_s`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::Label;
use crate::nn::layers::{init_linear, linear, Init};
use crate::nn::params::{trunc_normal, INIT_STD};
use crate::nn::{Graph, ParamStore, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Multiplier applied to `t ∈ [0, 1]` before the sinusoids.
const TIME_SCALE: f64 = 1000.0;

/// Sine/cosine features of a scalar time, `[1, dim]`.
pub fn timestep_features<T: Scalar>(t: f64, dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let x = t * TIME_SCALE;
    let mut out: Vec<T> = Vec::with_capacity(dim);
    out.extend((0..half).map(|i| T::of((x * 10000f64.powf(-(i as f64) / half as f64)).cos())));
    out.extend((0..half).map(|i| T::of((x * 10000f64.powf(-(i as f64) / half as f64)).sin())));
    out.resize(dim, T::zero());
    Tensor::new(vec![1, dim], out).expect("dim > 0")
}

pub fn init_condition<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    freq_dim: usize,
    hidden: usize,
    num_classes: usize,
    rng: &mut R,
) -> Result<()> {
    init_linear(store, "time.mlp1", freq_dim, hidden, true, Init::TruncNormal, rng)?;
    init_linear(store, "time.mlp2", hidden, hidden, true, Init::TruncNormal, rng)?;
    store.insert("class.table", trunc_normal(&[num_classes + 1, hidden], INIT_STD, rng))
}

/// `MLP(sinusoid(t)) + table[y]`, shape `[1, D]`. The null label reads the last row.
pub fn embed_condition<T: Scalar>(
    g: &mut Graph<'_, T>,
    t: f64,
    y: Label,
    freq_dim: usize,
    num_classes: usize,
) -> Result<Var> {
    let row = y.embedding_row(num_classes)?;
    let f = g.constant(timestep_features(t, freq_dim));
    let a = linear(g, f, "time.mlp1")?;
    let a = g.silu(a);
    let temb = linear(g, a, "time.mlp2")?;
    let table = g.param("class.table")?;
    let cemb = g.select_row(table, row)?;
    g.add(temb, cemb)
}

/// `c_s = e(t, y) + s_hat · W_proj`, broadcasting `e` over tokens.
///
/// `Proj` has no bias, so a zero waypoint gives `c_s = e` at every token.
pub fn build_spatial_condition<T: Scalar>(
    g: &mut Graph<'_, T>,
    e_ty: Var,
    s_hat: Var,
    tokens: usize,
) -> Result<Var> {
    let (n, _) = g.value(s_hat).dims2()?;
    if n != tokens {
        return Err(Error::Dimension(format!(
            "waypoint has {n} tokens, sequence has {tokens}"
        )));
    }
    let w = g.param("waypoint.proj.weight")?;
    let p = g.linear(s_hat, w, None)?;
    g.add_row(p, e_ty)
}
