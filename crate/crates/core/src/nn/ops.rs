//! Pure tensor-in, tensor-out forms of the shared layers.

use crate::error::{Error, Result};
use crate::nn::graph::Graph;
use crate::nn::kernels;
use crate::nn::layers::{self, AttentionConfig};
use crate::nn::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Normalizes the last axis by its RMS (floor [`kernels::RMS_EPS`]) and scales by `gain`.
pub fn rms_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>) -> Result<Tensor<T>> {
    let d = x.last_dim();
    if gain.len() != d {
        return Err(Error::shape(&[d], gain.shape()));
    }
    let (y, _) = kernels::rms_norm_forward(x.data(), d, Some(gain.data()));
    Tensor::new(x.shape().to_vec(), y)
}

/// Self-attention on `h: [N, D_h]` using `{prefix}.qkv` and `{prefix}.out`.
pub fn self_attention<T: Scalar>(
    h: &Tensor<T>,
    params: &ParamStore<T>,
    prefix: &str,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let mut g = Graph::frozen(params);
    let x = g.constant(h.clone());
    let y = layers::self_attention(&mut g, x, prefix, cfg)?;
    Ok(g.value(y).clone())
}

/// Two-layer GELU MLP on `h: [N, D_h]` using `{prefix}.fc1` and `{prefix}.fc2`.
pub fn mlp<T: Scalar>(h: &Tensor<T>, params: &ParamStore<T>, prefix: &str) -> Result<Tensor<T>> {
    let mut g = Graph::frozen(params);
    let x = g.constant(h.clone());
    let y = layers::mlp(&mut g, x, prefix)?;
    let out = g.value(y);
    if out.shape() != h.shape() {
        return Err(Error::shape(h.shape(), out.shape()));
    }
    Ok(out.clone())
}
