//! Linear interpolants, x-prediction velocities and the velocity-matching losses.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A class label, or the null label used for unconditional prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Class(usize),
    Null,
}

impl Label {
    /// Row of the `(C+1)`-row class-embedding table; the null label is row `C`.
    pub fn embedding_row(self, num_classes: usize) -> Result<usize> {
        match self {
            Label::Class(c) if c < num_classes => Ok(c),
            Label::Class(c) => Err(Error::InvalidLabel {
                label: c,
                num_classes,
            }),
            Label::Null => Ok(num_classes),
        }
    }
}

impl From<usize> for Label {
    fn from(c: usize) -> Self {
        Label::Class(c)
    }
}

/// A noisy sample `z_t` at time `t` with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState<T> {
    pub z_t: Tensor<T>,
    pub t: T,
    pub y: Label,
}

impl<T: Scalar> FlowState<T> {
    pub fn new(z_t: Tensor<T>, t: T, y: Label) -> Result<Self> {
        check_time(t)?;
        Ok(Self { z_t, t, y })
    }
}

/// Logit-normal training-time distribution: `logit(t) ~ N(mu, sigma²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSamplerConfig {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for TimeSamplerConfig {
    fn default() -> Self {
        Self { mu: -0.8, sigma: 0.8 }
    }
}

impl TimeSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidArgument(format!("time sampler {self:?}")));
        }
        Ok(())
    }
}

/// Floor on the `1 - t` divisor of x-prediction velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampConfig {
    pub tau_eps: f64,
}

impl Default for ClampConfig {
    fn default() -> Self {
        Self { tau_eps: 0.05 }
    }
}

impl ClampConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_eps > 0.0 && self.tau_eps < 1.0) {
            return Err(Error::InvalidArgument(format!("tau_eps {} not in (0,1)", self.tau_eps)));
        }
        Ok(())
    }

    /// `max(1 - t, tau_eps)`.
    pub fn denominator<T: Scalar>(&self, t: T) -> T {
        (T::one() - t).max(T::of(self.tau_eps))
    }
}

fn check_time<T: Scalar>(t: T) -> Result<()> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}

/// `z_t = t·x + (1-t)·eps`.
pub fn interpolate<T: Scalar>(x: &Tensor<T>, eps: &Tensor<T>, t: T) -> Result<Tensor<T>> {
    check_time(t)?;
    let s = T::one() - t;
    x.zip_map(eps, |a, b| t * a + s * b)
}

/// Ground-truth velocity `x - eps`.
pub fn true_velocity<T: Scalar>(x: &Tensor<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    x.sub(eps)
}

/// `(x_hat - z_t) / max(1-t, tau_eps)`.
pub fn velocity_from_xpred<T: Scalar>(
    x_hat: &Tensor<T>,
    z_t: &Tensor<T>,
    t: T,
    clamp: &ClampConfig,
) -> Result<Tensor<T>> {
    let inv = T::one() / clamp.denominator(t);
    x_hat.zip_map(z_t, |a, b| (a - b) * inv)
}

/// Mean squared error between the x-prediction velocity and `x - eps`.
pub fn v_loss<T: Scalar>(
    x_hat: &Tensor<T>,
    x: &Tensor<T>,
    eps: &Tensor<T>,
    t: T,
    clamp: &ClampConfig,
) -> Result<T> {
    x_hat.ensure_same_shape(x)?;
    let z_t = interpolate(x, eps, t)?;
    let v_hat = velocity_from_xpred(x_hat, &z_t, t, clamp)?;
    let v = true_velocity(x, eps)?;
    Ok(v_hat.sub(&v)?.norm_sq() / T::of(v.len() as f64))
}

/// Semantic velocity-matching loss; both velocities share the clamped divisor.
pub fn sem_v_loss<T: Scalar>(
    s_hat: &Tensor<T>,
    s0: &Tensor<T>,
    eps_sem: &Tensor<T>,
    t: T,
    clamp: &ClampConfig,
) -> Result<T> {
    s_hat.ensure_same_shape(s0)?;
    let z_sem = interpolate(s0, eps_sem, t)?;
    let v_hat = velocity_from_xpred(s_hat, &z_sem, t, clamp)?;
    let v = velocity_from_xpred(s0, &z_sem, t, clamp)?;
    Ok(v_hat.sub(&v)?.norm_sq() / T::of(v.len() as f64))
}

/// Recorded form of [`v_loss`]: `mean(((x_hat - z_t)/den - target)²)`.
///
/// `target` is `x - eps` for the pixel loss or the semantic target velocity.
pub fn velocity_loss_on_graph<T: Scalar>(
    g: &mut Graph<'_, T>,
    x_hat: Var,
    z_t: &Tensor<T>,
    target: &Tensor<T>,
    t: T,
    clamp: &ClampConfig,
) -> Result<Var> {
    let z = g.constant(z_t.clone());
    let diff = g.sub(x_hat, z)?;
    let v_hat = g.scale(diff, T::one() / clamp.denominator(t));
    let tgt = g.constant(target.clone());
    let err = g.sub(v_hat, tgt)?;
    Ok(g.mean_square(err))
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Draws `t = logistic(mu + sigma·g)` with `g ~ N(0,1)`.
pub fn sample_time<R: Rng + ?Sized>(cfg: &TimeSamplerConfig, rng: &mut R) -> f64 {
    let g: f64 = rng.sample(StandardNormal);
    logistic(cfg.mu + cfg.sigma * g)
}

/// Resolution at which the pixel noise has unit standard deviation by default.
pub const NOISE_REFERENCE: usize = 256;

/// Pixel-noise multiplier `image_size / 256`.
pub fn noise_scale(image_size: usize) -> f64 {
    noise_scale_at(image_size, NOISE_REFERENCE)
}

/// Pixel-noise multiplier `image_size / reference`.
pub fn noise_scale_at(image_size: usize, reference: usize) -> f64 {
    image_size as f64 / reference as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Tensor<f64> {
        Tensor::vector(x.to_vec())
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let x = v(&[2.0, -1.0]);
        let e = v(&[0.5, 3.0]);
        assert_eq!(interpolate(&x, &e, 0.0).unwrap(), e);
        assert_eq!(interpolate(&x, &e, 1.0).unwrap(), x);
        assert_eq!(interpolate(&v(&[2.0]), &v(&[0.0]), 0.5).unwrap(), v(&[1.0]));
        assert!(interpolate(&x, &e, 1.5).is_err());
        assert!(interpolate(&x, &v(&[1.0]), 0.5).is_err());
    }

    #[test]
    fn true_velocity_cases() {
        let x = v(&[3.0]);
        assert_eq!(true_velocity(&x, &x).unwrap(), v(&[0.0]));
        assert_eq!(true_velocity(&x, &v(&[1.0])).unwrap(), v(&[2.0]));
        let (a, xs, es) = (2.5, v(&[1.0, -2.0]), v(&[0.25, 4.0]));
        let lhs = true_velocity(&xs.scale(a), &es.scale(a)).unwrap();
        let rhs = true_velocity(&xs, &es).unwrap().scale(a);
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-15);
    }

    #[test]
    fn velocity_from_xpred_cases() {
        let c = ClampConfig::default();
        let z = v(&[0.3, -0.7]);
        for t in [0.0, 0.5, 0.99, 1.0] {
            assert_eq!(velocity_from_xpred(&z, &z, t, &c).unwrap(), v(&[0.0, 0.0]));
        }
        assert_eq!(velocity_from_xpred(&v(&[1.0]), &v(&[0.0]), 0.5, &c).unwrap(), v(&[2.0]));
        let got = velocity_from_xpred(&v(&[0.05]), &v(&[0.0]), 0.99, &c).unwrap();
        assert!((got.data()[0] - 1.0).abs() < 1e-12);
        // t = 1 is clamped, never a division by zero.
        assert!(velocity_from_xpred(&v(&[1.0]), &v(&[0.0]), 1.0, &c).unwrap().is_finite());
    }

    #[test]
    fn v_loss_cases() {
        let c = ClampConfig::default();
        let x = v(&[0.4, -1.2, 2.0]);
        let e = v(&[1.0, 0.3, -0.5]);
        assert!(v_loss(&x, &x, &e, 0.3, &c).unwrap() < 1e-24);
        // x_hat = z_t, eps = 0, x = 1, t = 0.5: v_hat = 0, v = 1.
        let z = interpolate(&v(&[1.0]), &v(&[0.0]), 0.5).unwrap();
        assert_eq!(v_loss(&z, &v(&[1.0]), &v(&[0.0]), 0.5, &c).unwrap(), 1.0);
    }

    #[test]
    fn sem_v_loss_cases() {
        let c = ClampConfig::default();
        let s0 = v(&[0.2, 0.9]);
        let e = v(&[-1.0, 0.5]);
        assert_eq!(sem_v_loss(&s0, &s0, &e, 0.4, &c).unwrap(), 0.0);
        let l = sem_v_loss(&v(&[1.0]), &v(&[0.0]), &v(&[0.7]), 0.5, &c).unwrap();
        assert!((l - 4.0).abs() < 1e-12);
        let l = sem_v_loss(&v(&[0.05]), &v(&[0.0]), &v(&[0.3]), 0.99, &c).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn time_sampler_degenerate_sigma() {
        let cfg = TimeSamplerConfig { mu: -0.8, sigma: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_time(&cfg, &mut rng);
        assert!((t - 0.310_025_518_872_388).abs() < 1e-12);
    }

    #[test]
    fn noise_scale_is_linear() {
        assert_eq!(noise_scale(256), 1.0);
        assert_eq!(noise_scale(32), 0.125);
        assert_eq!(noise_scale(64), 0.25);
    }

    #[test]
    fn labels_map_to_rows() {
        assert_eq!(Label::Class(2).embedding_row(4).unwrap(), 2);
        assert_eq!(Label::Null.embedding_row(4).unwrap(), 4);
        assert!(Label::Class(4).embedding_row(4).is_err());
    }
}
