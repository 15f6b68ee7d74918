//! Synthetic class-conditional images: the class fixes the shape, color is
//! shared across classes up to a per-class hue bias, and pose varies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyDatasetSpec {
    pub num_classes: usize,
    pub image_size: usize,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl ToyDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!("toy data needs ≥ 2 classes, got {}", self.num_classes)));
        }
        if self.image_size < 4 || self.samples_per_class == 0 {
            return Err(Error::InvalidArgument(format!("degenerate toy spec {self:?}")));
        }
        Ok(())
    }
}

const SHAPES: usize = 6;

/// Whether `(dx, dy)` relative to the center lies inside shape `kind` of radius `r`.
fn inside(kind: usize, dx: f64, dy: f64, r: f64) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    match kind {
        0 => dx.hypot(dy) <= r,
        1 => ax.max(ay) <= 0.8 * r,
        2 => (0.55 * r..=r).contains(&dx.hypot(dy)),
        3 => (ax <= r / 3.0 && ay <= r) || (ay <= r / 3.0 && ax <= r),
        4 => ax + ay <= r,
        _ => dy >= -r && dy <= r && ax <= 0.5 * (dy + r),
    }
}

/// HSV (hue in turns) to RGB in `[0, 1]`.
fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match h6 as usize {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn draw_image<R: Rng>(class: usize, spec: &ToyDatasetSpec, rng: &mut R) -> Vec<f64> {
    let s = spec.image_size as f64;
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let cx = s / 2.0 + rng.random_range(-s / 8.0..=s / 8.0);
    let cy = s / 2.0 + rng.random_range(-s / 8.0..=s / 8.0);
    let r = s * rng.random_range(0.25..0.36);
    // Hues overlap between neighbouring classes: the bias is a fraction of the spread.
    let hue = class as f64 / spec.num_classes as f64 * 0.5 + 0.12 * jitter.sample(rng);
    let fg = hsv(hue, rng.random_range(0.55..0.95), rng.random_range(0.7..1.0));
    let bg = rng.random_range(0.0..0.25);
    let kind = class % SHAPES;
    let mut out = Vec::with_capacity(spec.image_size * spec.image_size * 3);
    for y in 0..spec.image_size {
        for x in 0..spec.image_size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if inside(kind, dx, dy, r) {
                out.extend(fg.iter().map(|c| 2.0 * c - 1.0));
            } else {
                out.extend([2.0 * bg - 1.0; 3]);
            }
        }
    }
    out
}

/// Deterministic dataset, classes interleaved: sample `i` has label `i mod C`.
pub fn generate_toy_dataset<T: Scalar>(spec: &ToyDatasetSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_classes * spec.samples_per_class;
    let s = spec.image_size;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % spec.num_classes;
        let data = draw_image(y, spec, &mut rng).into_iter().map(T::of).collect();
        images.push(Tensor::new(vec![s, s, 3], data)?);
        labels.push(y);
    }
    Dataset::new(images, labels, spec.num_classes, s)
}
