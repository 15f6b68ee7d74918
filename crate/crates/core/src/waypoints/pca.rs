//! PCA projection of frozen features onto low-dimensional waypoints.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fitted PCA basis: `s_0 = (phi(x) - mean) · basis`, optionally divided by `scales`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointProjection<T> {
    /// `[D, d]`, orthonormal columns in decreasing-variance order.
    pub basis: Tensor<T>,
    /// `[D]` dataset feature mean.
    pub mean: Tensor<T>,
    /// `[d]` per-component divisor applied by [`WaypointProjection::project_normalized`].
    pub scales: Tensor<T>,
    /// `[d]` covariance eigenvalues of the kept components.
    pub variances: Tensor<T>,
}

/// Non-fatal conditions met while fitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PcaWarning {
    /// The covariance has fewer than `d` non-negligible eigenvalues; the
    /// remaining columns are an arbitrary orthonormal completion.
    RankDeficient { rank: usize, requested: usize },
}

#[derive(Debug, Clone)]
pub struct PcaFit<T> {
    pub projection: WaypointProjection<T>,
    pub warnings: Vec<PcaWarning>,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors
/// as the columns of a row-major `n×n` matrix.
pub fn symmetric_eigen<T: Scalar>(matrix: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let total: T = a.iter().map(|&x| x * x).sum();
    let tiny = T::epsilon() * T::epsilon() * total.max(T::min_positive_value());

    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= tiny {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap().then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![T::zero(); n * n];
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + col] = v[r * n + src];
        }
    }
    (values, vectors)
}

/// Flips each column so that its largest-magnitude entry is positive.
fn fix_signs<T: Scalar>(basis: &mut [T], rows: usize, cols: usize) {
    for c in 0..cols {
        let mut best = 0;
        for r in 1..rows {
            if basis[r * cols + c].abs() > basis[best * cols + c].abs() {
                best = r;
            }
        }
        if basis[best * cols + c] < T::zero() {
            for r in 0..rows {
                basis[r * cols + c] = -basis[r * cols + c];
            }
        }
    }
}

/// Fits the top-`d` principal subspace of `features: [M, D]`.
pub fn fit_pca<T: Scalar>(features: &Tensor<T>, d: usize) -> Result<PcaFit<T>> {
    let (m, dim) = features.dims2()?;
    if d == 0 || d > dim {
        return Err(Error::InvalidArgument(format!("cannot keep {d} of {dim} components")));
    }
    if m <= d {
        return Err(Error::InsufficientData(format!("{m} samples for {d} components")));
    }
    let x = features.data();
    let inv_m = T::one() / T::of(m as f64);
    let mut mean = vec![T::zero(); dim];
    for row in x.chunks_exact(dim) {
        for (a, &v) in mean.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    mean.iter_mut().for_each(|v| *v = *v * inv_m);

    let centered: Vec<T> = x
        .chunks_exact(dim)
        .flat_map(|row| row.iter().zip(&mean).map(|(&v, &mu)| v - mu))
        .collect();
    let mut cov = vec![T::zero(); dim * dim];
    let denom = T::one() / T::of((m - 1) as f64);
    T::gemm(
        dim,
        m,
        dim,
        denom,
        &centered,
        (1, dim as isize),
        &centered,
        (dim as isize, 1),
        T::zero(),
        &mut cov,
        (dim as isize, 1),
    );
    // Exact symmetry for the rotation sweep.
    for i in 0..dim {
        for j in i + 1..dim {
            let s = (cov[i * dim + j] + cov[j * dim + i]) * T::of(0.5);
            cov[i * dim + j] = s;
            cov[j * dim + i] = s;
        }
    }

    let (values, vectors) = symmetric_eigen(&cov, dim);
    let top = values[0].max(T::zero());
    // Relative to the top eigenvalue, with a floor at the rounding level of the raw data.
    let mag = features.max_abs();
    let tol = top.max(mag * mag) * T::of(dim as f64) * T::epsilon() * T::of(16.0);
    let rank = values.iter().filter(|&&v| v > tol && v > T::zero()).count();

    let mut basis: Vec<T> = (0..dim)
        .flat_map(|r| vectors[r * dim..r * dim + d].to_vec())
        .collect();
    fix_signs(&mut basis, dim, d);

    let kept = &values[..d];
    let scales = kept
        .iter()
        .map(|&v| if v > tol && v > T::zero() { v.sqrt() } else { T::one() })
        .collect();
    let mut warnings = Vec::new();
    if rank < d {
        log::warn!("PCA covariance has rank {rank} < {d}; padding with an orthonormal complement");
        warnings.push(PcaWarning::RankDeficient { rank, requested: d });
    }
    Ok(PcaFit {
        projection: WaypointProjection {
            basis: Tensor::new(vec![dim, d], basis)?,
            mean: Tensor::vector(mean),
            scales: Tensor::vector(scales),
            variances: Tensor::vector(kept.iter().map(|&v| v.max(T::zero())).collect()),
        },
        warnings,
    })
}

impl<T: Scalar> WaypointProjection<T> {
    pub fn feature_dim(&self) -> usize {
        self.basis.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.basis.shape()[1]
    }

    /// Drops per-component normalization.
    pub fn with_unit_scales(mut self) -> Self {
        self.scales = Tensor::full(&[self.dim()], T::one());
        self
    }

    /// `(phi - mean) · basis` per token; `phi` is `[N, D]`.
    pub fn project(&self, phi: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, dim) = phi.dims2()?;
        if dim != self.feature_dim() {
            return Err(Error::shape(&[n, self.feature_dim()], phi.shape()));
        }
        let centered: Vec<T> = phi
            .data()
            .chunks_exact(dim)
            .flat_map(|row| row.iter().zip(self.mean.data()).map(|(&v, &mu)| v - mu))
            .collect();
        Tensor::new(vec![n, dim], centered)?.matmul(&self.basis)
    }

    /// [`WaypointProjection::project`] divided by the per-component scales.
    pub fn project_normalized(&self, phi: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.project(phi)?;
        let d = self.dim();
        let data = s
            .data()
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(self.scales.data()).map(|(&v, &k)| v / k))
            .collect();
        Tensor::new(s.shape().to_vec(), data)
    }

    /// `s · basisᵀ + mean`, the feature-space point of an unnormalized waypoint.
    pub fn reconstruct(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        let back = s.matmul(&self.basis.transpose()?)?;
        let dim = self.feature_dim();
        let data = back
            .data()
            .chunks_exact(dim)
            .flat_map(|row| row.iter().zip(self.mean.data()).map(|(&v, &mu)| v + mu))
            .collect();
        Tensor::new(back.shape().to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_on_known_matrix() {
        // [[2,1],[1,2]] has eigenpairs (3, [1,1]/√2), (1, [1,-1]/√2).
        let (vals, vecs) = symmetric_eigen(&[2.0f64, 1.0, 1.0, 2.0], 2);
        assert!((vals[0] - 3.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs[0].abs() - h).abs() < 1e-14 && (vecs[2].abs() - h).abs() < 1e-14);
        assert!((vecs[0] * vecs[2] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn diagonal_covariance_picks_first_axis_with_positive_sign() {
        // Columns with variances 4 and 1 and no correlation.
        let rows = [[2.0, 1.0], [-2.0, 1.0], [2.0, -1.0], [-2.0, -1.0]];
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        let fit = fit_pca(&Tensor::new(vec![4, 2], data).unwrap(), 1).unwrap();
        assert_eq!(fit.projection.basis.data(), &[1.0, 0.0]);
        assert!(fit.warnings.is_empty());
    }

    #[test]
    fn repeated_point_is_rank_deficient() {
        let data: Vec<f64> = (0..10).flat_map(|_| [0.3, -0.2, 0.9]).collect();
        let fit = fit_pca(&Tensor::new(vec![10, 3], data).unwrap(), 2).unwrap();
        assert_eq!(
            fit.warnings,
            vec![PcaWarning::RankDeficient { rank: 0, requested: 2 }]
        );
        let b = &fit.projection.basis;
        let gram = b.transpose().unwrap().matmul(b).unwrap();
        assert!((gram.data()[0] - 1.0).abs() < 1e-12 && gram.data()[1].abs() < 1e-12);
        assert_eq!(fit.projection.scales.data(), &[1.0, 1.0]);
    }

    #[test]
    fn too_few_samples() {
        let t = Tensor::<f64>::zeros(&[3, 4]);
        assert!(matches!(fit_pca(&t, 3), Err(Error::InsufficientData(_))));
        assert!(fit_pca(&t, 5).is_err());
    }

    #[test]
    fn mean_projects_to_zero_and_identity_projection() {
        let p = WaypointProjection {
            basis: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            mean: Tensor::vector(vec![0.5, -0.5]),
            scales: Tensor::vector(vec![1.0, 1.0]),
            variances: Tensor::vector(vec![1.0, 1.0]),
        };
        let phi = Tensor::new(vec![3, 2], [0.5, -0.5].repeat(3)).unwrap();
        assert_eq!(p.project(&phi).unwrap(), Tensor::zeros(&[3, 2]));
        let p0 = WaypointProjection {
            mean: Tensor::zeros(&[2]),
            ..p
        };
        let x = Tensor::new(vec![1, 2], vec![0.7, -1.1]).unwrap();
        assert_eq!(p0.project(&x).unwrap(), x);
        assert!(p0.project(&Tensor::zeros(&[1, 3])).is_err());
    }
}
