//! AdamW, parameter EMA and the warmup learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per parameter, and the update count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(k, p)| (k.to_string(), Tensor::zeros(p.shape()))).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected AdamW update from the store's accumulated gradients.
///
/// `θ ← θ - lr·wd·θ - lr·m̂ / (√v̂ + eps)`.
pub fn optimizer_step<T: Scalar>(
    params: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = T::of(1.0 / (1.0 - b1.powi(t)));
    let c2 = T::of(1.0 / (1.0 - b2.powi(t)));
    let (b1, b2, eps) = (T::of(b1), T::of(b2), T::of(cfg.eps));
    let (lr_t, decay) = (T::of(lr), T::of(1.0 - lr * cfg.weight_decay));
    for (name, p, g) in params.with_grads_mut() {
        let missing = || Error::State(format!("optimizer state has no entry for {name}"));
        let m = state.m.get_mut(name).ok_or_else(missing)?;
        let v = state.v.get_mut(name).ok_or_else(missing)?;
        p.ensure_same_shape(m)?;
        let (md, vd) = (m.data_mut(), v.data_mut());
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(md.iter_mut()).zip(vd.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let upd = (*mi * c1) / ((*vi * c2).sqrt() + eps);
            *w = *w * decay - lr_t * upd;
        }
    }
    Ok(())
}

/// Exponential moving average of a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaShadow<T> {
    pub decay: f64,
    pub params: ParamStore<T>,
}

impl<T: Scalar> EmaShadow<T> {
    pub fn new(params: &ParamStore<T>, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::InvalidArgument(format!("EMA decay {decay} outside [0, 1]")));
        }
        Ok(Self {
            decay,
            params: params.cast(),
        })
    }
}

/// `shadow ← decay·shadow + (1 - decay)·params`.
pub fn ema_update<T: Scalar>(shadow: &mut EmaShadow<T>, params: &ParamStore<T>) -> Result<()> {
    let d = T::of(shadow.decay);
    let keep = T::one() - d;
    let names: Vec<String> = shadow.params.names().map(str::to_string).collect();
    for name in names {
        let live = params.get(&name)?;
        let s = shadow.params.get(&name)?;
        let next = s.zip_map(live, |a, b| d * a + keep * b)?;
        shadow.params.set(&name, next)?;
    }
    Ok(())
}

/// Linear warmup over `warmup_epochs · steps_per_epoch` steps, then constant.
///
/// Step `k` (0-based) gets `base · min(1, (k + 1) / warmup_steps)`.
pub fn lr_schedule(step: usize, steps_per_epoch: usize, base_lr: f64, warmup_epochs: f64) -> f64 {
    let warmup = (warmup_epochs * steps_per_epoch as f64).round();
    if warmup <= 0.0 {
        return base_lr;
    }
    base_lr * ((step + 1) as f64 / warmup).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(v.to_vec())).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: &[f64]) {
        s.zero_grad();
        let mut m = BTreeMap::new();
        m.insert("w".to_string(), Tensor::vector(g.to_vec()));
        s.accumulate(&m, 1.0).unwrap();
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store(&[0.5, -1.0]);
        let mut st = AdamState::new(&s);
        optimizer_step(&mut s, &mut st, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[0.5, -1.0]);
    }

    #[test]
    fn decoupled_decay_alone() {
        let mut s = store(&[2.0]);
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        optimizer_step(&mut s, &mut st, 0.01, &cfg).unwrap();
        assert!((s.get("w").unwrap().data()[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_have_magnitude_lr() {
        let mut s = store(&[0.0, 0.0]);
        let mut st = AdamState::new(&s);
        let lr = 1e-2;
        let mut prev = s.get("w").unwrap().clone();
        for _ in 0..200 {
            set_grad(&mut s, &[3.0, -0.5]);
            optimizer_step(&mut s, &mut st, lr, &AdamConfig::default()).unwrap();
            let now = s.get("w").unwrap().clone();
            let step = now.sub(&prev).unwrap();
            // Bias correction makes every step exactly -lr·sign(g) up to eps.
            assert!((step.data()[0] + lr).abs() < 1e-8 && (step.data()[1] - lr).abs() < 1e-8);
            prev = now;
        }
    }

    #[test]
    fn ema_cases() {
        let live = store(&[2.0]);
        let mut e = EmaShadow::new(&store(&[0.0]), 0.5).unwrap();
        ema_update(&mut e, &live).unwrap();
        assert_eq!(e.params.get("w").unwrap().data(), &[1.0]);
        let mut e = EmaShadow::new(&store(&[0.3]), 1.0).unwrap();
        ema_update(&mut e, &live).unwrap();
        assert_eq!(e.params.get("w").unwrap().data(), &[0.3]);
        let mut e = EmaShadow::new(&store(&[0.3]), 0.0).unwrap();
        ema_update(&mut e, &live).unwrap();
        assert_eq!(e.params.get("w").unwrap().data(), &[2.0]);
        assert!(EmaShadow::new(&live, 1.5).is_err());
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(lr_schedule(0, 10, 1.0, 5.0), 1.0 / 50.0);
        assert_eq!(lr_schedule(49, 10, 1.0, 5.0), 1.0);
        assert_eq!(lr_schedule(10_000, 10, 1.0, 5.0), 1.0);
        assert_eq!(lr_schedule(0, 10, 0.3, 0.0), 0.3);
    }
}
