//! A fixed classifier used to score generated toy samples by class accuracy.
//!
//! Features describe the foreground silhouette independently of color and
//! of position: a soft foreground mask is reduced to its area, a radial
//! profile around its centroid and a few normalized moments. A softmax
//! regression on those features is fit by full-batch gradient descent.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const RADIAL_BINS: usize = 10;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Silhouette descriptors of an `[S, S, 3]` image in `[-1, 1]`.
pub fn silhouette_features<T: Scalar>(image: &Tensor<T>) -> Result<Vec<f64>> {
    let s = match image.shape() {
        &[h, w, 3] if h == w => h,
        sh => return Err(Error::Dimension(format!("expected a square RGB image, got {sh:?}"))),
    };
    let mask: Vec<f64> = image
        .data()
        .chunks_exact(3)
        .map(|p| {
            let m = p.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            sigmoid((m + 0.1) * 8.0)
        })
        .collect();
    let area: f64 = mask.iter().sum::<f64>().max(1e-6);
    let coords = |i: usize| ((i % s) as f64 + 0.5, (i / s) as f64 + 0.5);
    let (mut cx, mut cy) = (0.0, 0.0);
    for (i, &m) in mask.iter().enumerate() {
        let (x, y) = coords(i);
        cx += m * x;
        cy += m * y;
    }
    cx /= area;
    cy /= area;
    let r0 = (area / std::f64::consts::PI).sqrt().max(1e-3);
    let mut radial = [0.0; RADIAL_BINS];
    let (mut m2, mut m4, mut mxy, mut m3y, mut center) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &m) in mask.iter().enumerate() {
        let (x, y) = coords(i);
        let (dx, dy) = ((x - cx) / r0, (y - cy) / r0);
        let r = dx.hypot(dy);
        let bin = ((r / 1.6) * RADIAL_BINS as f64) as usize;
        if bin < RADIAL_BINS {
            // Fraction of the annulus that is foreground.
            radial[bin] += m;
        }
        let r2 = dx * dx + dy * dy;
        m2 += m * r2;
        m4 += m * (dx.powi(4) + dy.powi(4));
        mxy += m * dx * dx * dy * dy;
        m3y += m * dy.powi(3);
        if r < 0.3 {
            center += m;
        }
    }
    let mut all = Vec::with_capacity(RADIAL_BINS + 7);
    for (b, v) in radial.iter().enumerate() {
        let (lo, hi) = (b as f64 * 1.6 / RADIAL_BINS as f64, (b + 1) as f64 * 1.6 / RADIAL_BINS as f64);
        let ring = std::f64::consts::PI * (hi * hi - lo * lo) * r0 * r0;
        all.push(v / ring);
    }
    let m2n = m2 / area;
    all.extend([
        area / (s * s) as f64,
        m2n,
        m4 / (area * m2n * m2n).max(1e-9),
        mxy / (area * m2n * m2n).max(1e-9),
        m3y / area,
        center / (std::f64::consts::PI * 0.09 * r0 * r0),
        1.0,
    ]);
    Ok(all)
}

/// Softmax regression on [`silhouette_features`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    num_classes: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `[F, C]` row-major.
    weights: Vec<f64>,
}

impl ToyClassifier {
    /// Fits on every sample of `data` with `iters` full-batch gradient steps.
    pub fn fit<T: Scalar>(data: &Dataset<T>, iters: usize, lr: f64, l2: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InsufficientData("classifier needs training samples".into()));
        }
        let feats = data.images.iter().map(silhouette_features).collect::<Result<Vec<_>>>()?;
        let f = feats[0].len();
        let n = feats.len() as f64;
        let mean: Vec<f64> = (0..f).map(|j| feats.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..f)
            .map(|j| {
                let v = feats.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 1e-12 { 1.0 / v.sqrt() } else { 0.0 }
            })
            .collect();
        let c = data.num_classes;
        let mut clf = Self {
            num_classes: c,
            mean,
            scale,
            weights: vec![0.0; f * c],
        };
        let xs: Vec<Vec<f64>> = feats.iter().map(|x| clf.standardize(x)).collect();
        for _ in 0..iters {
            let mut grad = vec![0.0; f * c];
            for (x, &y) in xs.iter().zip(&data.labels) {
                let p = clf.probs_std(x);
                for (j, &xj) in x.iter().enumerate() {
                    for k in 0..c {
                        let target = if k == y { 1.0 } else { 0.0 };
                        grad[j * c + k] += (p[k] - target) * xj / n;
                    }
                }
            }
            for (w, g) in clf.weights.iter_mut().zip(&grad) {
                *w -= lr * (g + l2 * *w);
            }
        }
        Ok(clf)
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .enumerate()
            .map(|(j, (v, (m, s)))| if j + 1 == x.len() { 1.0 } else { (v - m) * s })
            .collect()
    }

    fn probs_std(&self, x: &[f64]) -> Vec<f64> {
        let c = self.num_classes;
        let logits: Vec<f64> = (0..c).map(|k| x.iter().enumerate().map(|(j, v)| v * self.weights[j * c + k]).sum()).collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    pub fn probabilities<T: Scalar>(&self, image: &Tensor<T>) -> Result<Vec<f64>> {
        Ok(self.probs_std(&self.standardize(&silhouette_features(image)?)))
    }

    pub fn predict<T: Scalar>(&self, image: &Tensor<T>) -> Result<usize> {
        let p = self.probabilities(image)?;
        Ok(p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k).unwrap_or(0))
    }

    /// Fraction of `images` whose prediction equals the matching label.
    pub fn accuracy<T: Scalar>(&self, images: &[Tensor<T>], labels: &[usize]) -> Result<f64> {
        if images.len() != labels.len() || images.is_empty() {
            return Err(Error::InvalidArgument("accuracy needs matching, non-empty inputs".into()));
        }
        let mut hits = 0usize;
        for (img, &y) in images.iter().zip(labels) {
            hits += usize::from(self.predict(img)? == y);
        }
        Ok(hits as f64 / images.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_toy_dataset, ToyDatasetSpec};

    #[test]
    fn separates_held_out_toy_classes() {
        let spec = |seed, n| ToyDatasetSpec {
            num_classes: 4,
            image_size: 16,
            samples_per_class: n,
            seed,
        };
        let train = generate_toy_dataset::<f64>(&spec(1, 100)).unwrap();
        let test = generate_toy_dataset::<f64>(&spec(2, 50)).unwrap();
        let clf = ToyClassifier::fit(&train, 300, 0.5, 1e-4).unwrap();
        let acc = clf.accuracy(&test.images, &test.labels).unwrap();
        assert!(acc > 0.9, "held-out accuracy {acc}");
        // Pure noise is not confidently a single shape.
        assert!(clf.predict(&Tensor::<f64>::zeros(&[16, 16, 3])).unwrap() < 4);
    }
}
