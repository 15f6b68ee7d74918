//! ODE sampling with per-evaluation waypoint recalibration and interval-gated CFG.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::PixelGenerator;
use crate::error::{Error, Result};
use crate::flow::{velocity_from_xpred, ClampConfig, Label};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::waypoints::WaypointGenerator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    Euler,
    #[default]
    Heun,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Euler => "euler",
            Solver::Heun => "heun",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Solver::Euler),
            "heun" => Ok(Solver::Heun),
            _ => Err(Error::Config(format!("unknown solver `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub solver: Solver,
    pub cfg_scale: f64,
    /// Guidance applies for evaluation times in `[lo, hi)`.
    pub cfg_interval: (f64, f64),
    pub seed: u64,
    pub clamp: ClampConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            solver: Solver::Heun,
            cfg_scale: 1.0,
            cfg_interval: (0.1, 1.0),
            seed: 0,
            clamp: ClampConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.cfg_interval;
        if self.steps == 0 {
            return Err(Error::InvalidArgument("sampler needs at least one step".into()));
        }
        if !(self.cfg_scale >= 0.0) || !self.cfg_scale.is_finite() {
            return Err(Error::InvalidArgument(format!("cfg scale {}", self.cfg_scale)));
        }
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!("cfg interval [{lo}, {hi})")));
        }
        self.clamp.validate()
    }

    /// Whether guidance is applied at evaluation time `t`.
    pub fn guidance_active(&self, t: f64) -> bool {
        self.cfg_scale != 1.0 && t >= self.cfg_interval.0 && t < self.cfg_interval.1
    }
}

/// The pixel generator and, unless running the baseline, its waypoint generator.
#[derive(Debug, Clone, Copy)]
pub struct Models<'a, T> {
    pub pixel: &'a PixelGenerator<T>,
    pub waypoints: Option<&'a WaypointGenerator<T>>,
}

impl<'a, T: Scalar> Models<'a, T> {
    pub fn new(pixel: &'a PixelGenerator<T>, waypoints: Option<&'a WaypointGenerator<T>>) -> Self {
        Self { pixel, waypoints }
    }

    pub fn image_size(&self) -> usize {
        self.pixel.cfg.image_size
    }

    /// `z_0` at the pixel generator's training noise level.
    pub fn initial_noise(&self, seed: u64) -> Tensor<T> {
        initial_noise(self.image_size(), self.pixel.cfg.noise_scale(), seed)
    }

    /// Velocity of one branch: waypoint, then clean image, then the x-prediction velocity.
    pub fn velocity(
        &self,
        z: &Tensor<T>,
        t: f64,
        y: Label,
        clamp: &ClampConfig,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let s_hat = match self.waypoints {
            Some(w) => Some(w.predict(z, t, y)?),
            None => None,
        };
        let x_hat = self.pixel.predict(z, t, y, s_hat.as_ref())?;
        let v = velocity_from_xpred(&x_hat, z, T::of(t), clamp)?;
        Ok((v, s_hat))
    }
}

/// `v_uncond + w·(v_cond - v_uncond)`.
pub fn cfg_combine<T: Scalar>(v_uncond: &Tensor<T>, v_cond: &Tensor<T>, w: f64) -> Result<Tensor<T>> {
    let w = T::of(w);
    v_uncond.zip_map(v_cond, |u, c| u + w * (c - u))
}

/// Result of one guided velocity evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedVelocity<T> {
    pub v: Tensor<T>,
    pub v_cond: Tensor<T>,
    /// Present only when guidance was active.
    pub v_uncond: Option<Tensor<T>>,
    pub s_hat: Option<Tensor<T>>,
}

/// Conditional velocity, combined with the null-label velocity inside the guidance interval.
pub fn guided_velocity<T: Scalar>(
    models: &Models<'_, T>,
    z: &Tensor<T>,
    t: f64,
    y: Label,
    cfg: &SamplerConfig,
) -> Result<GuidedVelocity<T>> {
    let (v_cond, s_hat) = models.velocity(z, t, y, &cfg.clamp)?;
    if !cfg.guidance_active(t) {
        return Ok(GuidedVelocity {
            v: v_cond.clone(),
            v_cond,
            v_uncond: None,
            s_hat,
        });
    }
    let (v_uncond, _) = models.velocity(z, t, Label::Null, &cfg.clamp)?;
    Ok(GuidedVelocity {
        v: cfg_combine(&v_uncond, &v_cond, cfg.cfg_scale)?,
        v_cond,
        v_uncond: Some(v_uncond),
        s_hat,
    })
}

/// `z + (t1 - t0)·v`.
pub fn euler_step<T: Scalar>(z: &Tensor<T>, t0: f64, t1: f64, v: &Tensor<T>) -> Result<Tensor<T>> {
    let dt = T::of(t1 - t0);
    z.zip_map(v, |a, b| a + dt * b)
}

/// Explicit trapezoidal step given the velocity already evaluated at `(z, t0)`.
pub fn heun_step_from<T: Scalar>(
    z: &Tensor<T>,
    t0: f64,
    t1: f64,
    v0: &Tensor<T>,
    mut velocity: impl FnMut(&Tensor<T>, f64) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let pred = euler_step(z, t0, t1, v0)?;
    let v1 = velocity(&pred, t1)?;
    let half = T::of(0.5 * (t1 - t0));
    let avg = v0.add(&v1)?;
    z.zip_map(&avg, |a, b| a + half * b)
}

/// Explicit trapezoidal (Heun) step of `dz/dt = velocity(z, t)`.
pub fn heun_step<T: Scalar>(
    z: &Tensor<T>,
    t0: f64,
    t1: f64,
    mut velocity: impl FnMut(&Tensor<T>, f64) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let v0 = velocity(z, t0)?;
    heun_step_from(z, t0, t1, &v0, velocity)
}

/// `t_k = k / K` for `k = 0..=K`.
pub fn linear_schedule(steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 / steps as f64).collect()
}

/// State and velocities at the first evaluation of one integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep<T> {
    pub step: usize,
    pub t: f64,
    pub z: Tensor<T>,
    pub s_hat: Option<Tensor<T>>,
    pub v_cond: Tensor<T>,
    pub v_uncond: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord<T> {
    pub steps: Vec<TrajectoryStep<T>>,
}

#[derive(Serialize)]
struct TraceLine {
    step: usize,
    t: f64,
    z_norm: f64,
    s_hat_norm: Option<f64>,
    v_cond_norm: f64,
    v_uncond_norm: Option<f64>,
}

impl<T: Scalar> TrajectoryRecord<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// One JSON object per step with the step index, time and tensor norms.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.steps {
            let line = TraceLine {
                step: s.step,
                t: s.t,
                z_norm: s.z.norm().as_f64(),
                s_hat_norm: s.s_hat.as_ref().map(|x| x.norm().as_f64()),
                v_cond_norm: s.v_cond.norm().as_f64(),
                v_uncond_norm: s.v_uncond.as_ref().map(|x| x.norm().as_f64()),
            };
            serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Initial noise `z_0 ~ N(0, std²·I)` for an `s×s` image.
pub fn initial_noise<T: Scalar>(image_size: usize, std: f64, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(&[image_size, image_size, 3], T::of(std), &mut rng)
}

/// Integrates from `z_0` to `t = 1`, recording the trajectory.
pub fn integrate<T: Scalar>(
    models: &Models<'_, T>,
    z0: Tensor<T>,
    y: Label,
    cfg: &SamplerConfig,
) -> Result<(Tensor<T>, TrajectoryRecord<T>)> {
    cfg.validate()?;
    let ts = linear_schedule(cfg.steps);
    let mut z = z0;
    let mut record = TrajectoryRecord::default();
    for k in 0..cfg.steps {
        let (t0, t1) = (ts[k], ts[k + 1]);
        let g = guided_velocity(models, &z, t0, y, cfg)?;
        let next = match cfg.solver {
            Solver::Euler => euler_step(&z, t0, t1, &g.v)?,
            Solver::Heun => heun_step_from(&z, t0, t1, &g.v, |zp, t| Ok(guided_velocity(models, zp, t, y, cfg)?.v))?,
        };
        record.steps.push(TrajectoryStep {
            step: k,
            t: t0,
            z,
            s_hat: g.s_hat,
            v_cond: g.v_cond,
            v_uncond: g.v_uncond,
        });
        if !next.is_finite() {
            return Err(Error::Numerical { step: k });
        }
        z = next;
    }
    Ok((z, record))
}

/// Draws `z_0` from `cfg.seed` and integrates; see [`integrate`].
pub fn sample<T: Scalar>(
    models: &Models<'_, T>,
    y: Label,
    cfg: &SamplerConfig,
) -> Result<(Tensor<T>, TrajectoryRecord<T>)> {
    let z0 = models.initial_noise(cfg.seed);
    integrate(models, z0, y, cfg)
}
