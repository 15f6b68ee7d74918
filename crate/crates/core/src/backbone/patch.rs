//! Patch layout, position embeddings and the bottleneck patch embedding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{init_linear, linear, Init};
use crate::nn::{Graph, ParamStore, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Splits `[H, W, 3]` into non-overlapping `p×p` patches.
///
/// Patches are ordered row-major over the grid; each patch vector is the
/// row-major pixels of the patch with channels last, length `p·p·3`.
pub fn image_to_patches<T: Scalar>(image: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let (h, w, c) = image_dims(image)?;
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Dimension(format!("{h}x{w} image not divisible into {p}x{p} patches")));
    }
    let (gh, gw) = (h / p, w / p);
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for py in 0..gh {
        for px in 0..gw {
            for y in 0..p {
                let row = (py * p + y) * w + px * p;
                out.extend_from_slice(&src[row * c..(row + p) * c]);
            }
        }
    }
    Tensor::new(vec![gh * gw, p * p * c], out)
}

/// Inverse of [`image_to_patches`] for an `h×w` RGB image.
pub fn patches_to_image<T: Scalar>(patches: &Tensor<T>, p: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, len) = patches.dims2()?;
    let c = 3;
    if p == 0 || h % p != 0 || w % p != 0 || n != (h / p) * (w / p) || len != p * p * c {
        return Err(Error::Dimension(format!(
            "{n} patches of {len} values do not tile a {h}x{w} image at patch {p}"
        )));
    }
    let gw = w / p;
    let src = patches.data();
    let mut out = vec![T::zero(); h * w * c];
    for (idx, patch) in src.chunks_exact(len).enumerate() {
        let (py, px) = (idx / gw, idx % gw);
        for y in 0..p {
            let row = (py * p + y) * w + px * p;
            out[row * c..(row + p) * c].copy_from_slice(&patch[y * p * c..(y + 1) * p * c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

pub(crate) fn image_dims<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[h, w, 3] => Ok((h, w, 3)),
        s => Err(Error::Dimension(format!("expected [H, W, 3] image, got {s:?}"))),
    }
}

fn sincos(pos: f64, dim: usize) -> impl Iterator<Item = f64> {
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half).map(|i| 10000f64.powf(-(i as f64) / half as f64)).collect();
    let sin: Vec<f64> = freqs.iter().map(|f| (pos * f).sin()).collect();
    let cos: Vec<f64> = freqs.iter().map(|f| (pos * f).cos()).collect();
    sin.into_iter().chain(cos)
}

/// Fixed 2-D sine/cosine position embedding for a `grid×grid` layout, `[grid², dim]`.
///
/// The first half of each row encodes the row index, the second half the column.
pub fn position_embedding<T: Scalar>(grid: usize, dim: usize) -> Result<Tensor<T>> {
    if dim % 4 != 0 {
        return Err(Error::Dimension(format!("position embedding width {dim} not divisible by 4")));
    }
    let mut data = Vec::with_capacity(grid * grid * dim);
    for r in 0..grid {
        for c in 0..grid {
            data.extend(sincos(r as f64, dim / 2).chain(sincos(c as f64, dim / 2)).map(T::of));
        }
    }
    Tensor::new(vec![grid * grid, dim], data)
}

/// `patch → bottleneck` (no bias) `→ hidden` (with bias).
pub fn init_patch_embed<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    patch_dim: usize,
    bottleneck: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<()> {
    init_linear(store, &format!("{prefix}.proj1"), patch_dim, bottleneck, false, Init::TruncNormal, rng)?;
    init_linear(store, &format!("{prefix}.proj2"), bottleneck, hidden, true, Init::TruncNormal, rng)
}

/// Embeds patch vectors and adds the fixed position embedding.
pub fn patch_embed<T: Scalar>(
    g: &mut Graph<'_, T>,
    patches: Var,
    prefix: &str,
    pos: &Tensor<T>,
) -> Result<Var> {
    let a = linear(g, patches, &format!("{prefix}.proj1"))?;
    let a = linear(g, a, &format!("{prefix}.proj2"))?;
    let p = g.constant(pos.clone());
    g.add(a, p)
}
