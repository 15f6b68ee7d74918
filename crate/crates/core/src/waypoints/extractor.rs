//! Frozen patch-wise feature extractors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::image_to_patches;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A fixed map from an `[H, W, 3]` image to per-patch features `[N, D]`.
pub trait FeatureExtractor {
    fn patch_size(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn extract<T: Scalar>(&self, image: &Tensor<T>) -> Result<Tensor<T>>;
}

/// `tanh(patch · Q)` with `Q` a seeded random matrix with orthonormal columns
/// (or rows, when the feature width exceeds the patch width).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFeatureExtractor {
    patch_size: usize,
    map: Tensor<f64>,
    seed: u64,
}

impl ToyFeatureExtractor {
    pub const DEFAULT_DIM: usize = 128;

    pub fn new(patch_size: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        if patch_size == 0 || feature_dim == 0 {
            return Err(Error::InvalidArgument("extractor needs positive patch size and width".into()));
        }
        let p = patch_size * patch_size * 3;
        let (tall, short) = (p.max(feature_dim), p.min(feature_dim));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Tensor::<f64>::randn(&[tall, short], 1.0, &mut rng);
        let q = orthonormal_columns(&g)?;
        let map = if p >= feature_dim { q } else { q.transpose()? };
        Ok(Self { patch_size, map, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Modified Gram-Schmidt on the columns of a tall matrix.
fn orthonormal_columns(a: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (m, n) = a.dims2()?;
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.data()[i * n + j]).collect()).collect();
    for j in 0..n {
        for k in 0..j {
            let (done, rest) = cols.split_at_mut(j);
            let r: f64 = done[k].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
            for (x, q) in rest[0].iter_mut().zip(&done[k]) {
                *x -= r * q;
            }
        }
        let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Numerical { step: j });
        }
        cols[j].iter_mut().for_each(|x| *x /= norm);
    }
    Ok(Tensor::from_fn(&[m, n], |idx| cols[idx % n][idx / n]))
}

impl FeatureExtractor for ToyFeatureExtractor {
    fn patch_size(&self) -> usize {
        self.patch_size
    }

    fn feature_dim(&self) -> usize {
        self.map.shape()[1]
    }

    fn extract<T: Scalar>(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let patches = image_to_patches(&image.cast::<f64>(), self.patch_size)?;
        Ok(patches.matmul(&self.map)?.map(f64::tanh).cast())
    }
}
