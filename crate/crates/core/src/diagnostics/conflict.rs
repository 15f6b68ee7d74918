//! Directional and magnitude conflict between velocity branches along a trajectory.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::Label;
use crate::sampler::{euler_step, heun_step_from, linear_schedule, Models, SamplerConfig, Solver};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Norm below which a velocity has no direction.
pub const MIN_NORM: f64 = 1e-12;

/// Reference measurements for a 256×256 pixel-space baseline and its
/// waypoint-conditioned counterpart, kept for comparison in reports only.
pub mod reference {
    pub const BASELINE_MIDPOINT_C_PAIR: f64 = 1.294e-4;
    pub const WAYPOINT_MIDPOINT_C_PAIR: f64 = 8.363e-5;
    pub const BASELINE_PEAK_C_PAIR: f64 = 8.532e-3;
    pub const WAYPOINT_PEAK_C_PAIR: f64 = 5.262e-3;
    pub const BASELINE_MIDPOINT_C_REL: f64 = 1.304e-2;
    pub const WAYPOINT_MIDPOINT_C_REL: f64 = 1.159e-2;
}

fn unit<T: Scalar>(v: &Tensor<T>, what: &str) -> Result<Vec<f64>> {
    let n = v.norm().as_f64();
    if !(n >= MIN_NORM) {
        return Err(Error::Undefined(format!("{what} has norm {n:e}")));
    }
    Ok(v.data().iter().map(|x| x.as_f64() / n).collect())
}

/// `0.5·(1 - cos(a, b))`, computed as `‖â - b̂‖²/4` so that equal directions give exactly 0.
pub fn pairwise_conflict<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let ua = unit(a, "first velocity")?;
    let ub = unit(b, "second velocity")?;
    let d: f64 = ua.iter().zip(&ub).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((d / 4.0).clamp(0.0, 1.0))
}

/// `‖v_cond - v_uncond‖ / ‖v_cond‖`.
pub fn cfg_rel_distance<T: Scalar>(v_cond: &Tensor<T>, v_uncond: &Tensor<T>) -> Result<f64> {
    let n = v_cond.norm().as_f64();
    if !(n >= MIN_NORM) {
        return Err(Error::Undefined(format!("conditional velocity has norm {n:e}")));
    }
    Ok(v_cond.sub(v_uncond)?.norm().as_f64() / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictConfig {
    /// Counterfactual label offset: `y_alt = (y + stride) mod C`.
    pub stride: usize,
    pub batches: usize,
    pub batch_size: usize,
    /// Steps, solver, clamp and base seed. Guidance settings are ignored:
    /// the trajectory always follows the conditional velocity.
    pub sampler: SamplerConfig,
}

impl ConflictConfig {
    /// Stride `C/2`, 4 batches of 32, 50 Heun steps.
    pub fn with_defaults(num_classes: usize) -> Self {
        Self {
            stride: num_classes / 2,
            batches: 4,
            batch_size: 32,
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConflictPoint {
    pub step: usize,
    pub t: f64,
    pub c_pair_mean: f64,
    pub c_pair_std: f64,
    pub c_rel_mean: f64,
    pub c_rel_std: f64,
    /// Samples whose metric was undefined at this step.
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConflictTrace {
    pub points: Vec<ConflictPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConflictSummary {
    pub midpoint_step: usize,
    pub midpoint_t: f64,
    pub midpoint_c_pair: f64,
    pub midpoint_c_rel: f64,
    pub peak_c_pair: f64,
    pub peak_c_rel: f64,
}

impl ConflictTrace {
    /// The step whose time is nearest 0.5; the earlier one on ties.
    pub fn midpoint(&self) -> &ConflictPoint {
        self.points
            .iter()
            .min_by(|a, b| (a.t - 0.5).abs().total_cmp(&(b.t - 0.5).abs()))
            .expect("trace has at least one step")
    }

    pub fn peak_c_pair(&self) -> f64 {
        self.points.iter().map(|p| p.c_pair_mean).fold(0.0, f64::max)
    }

    pub fn peak_c_rel(&self) -> f64 {
        self.points.iter().map(|p| p.c_rel_mean).fold(0.0, f64::max)
    }

    pub fn summary(&self) -> ConflictSummary {
        let m = self.midpoint();
        ConflictSummary {
            midpoint_step: m.step,
            midpoint_t: m.t,
            midpoint_c_pair: m.c_pair_mean,
            midpoint_c_rel: m.c_rel_mean,
            peak_c_pair: self.peak_c_pair(),
            peak_c_rel: self.peak_c_rel(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,t,c_pair_mean,c_pair_std,c_rel_mean,c_rel_std")?;
        for p in &self.points {
            writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e}",
                p.step, p.t, p.c_pair_mean, p.c_pair_std, p.c_rel_mean, p.c_rel_std
            )?;
        }
        Ok(())
    }
}

/// Ratios `a / b` of the headline numbers of two traces.
#[derive(Debug, Clone, Serialize)]
pub struct ConflictComparison {
    pub a: ConflictSummary,
    pub b: ConflictSummary,
    pub midpoint_c_pair_ratio: f64,
    pub peak_c_pair_ratio: f64,
    pub midpoint_c_rel_ratio: f64,
}

pub fn compare_traces(a: &ConflictTrace, b: &ConflictTrace) -> ConflictComparison {
    let (sa, sb) = (a.summary(), b.summary());
    ConflictComparison {
        midpoint_c_pair_ratio: sa.midpoint_c_pair / sb.midpoint_c_pair,
        peak_c_pair_ratio: sa.peak_c_pair / sb.peak_c_pair,
        midpoint_c_rel_ratio: sa.midpoint_c_rel / sb.midpoint_c_rel,
        a: sa,
        b: sb,
    }
}

#[derive(Default, Clone)]
struct Accum {
    pair: Vec<f64>,
    rel: Vec<f64>,
    missing: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Integrates conditional trajectories and, at each step, measures the
/// counterfactual-label conflict and the null-label distance on the same state.
///
/// Sample `i` (over all batches) uses label `i mod C` and noise seed `seed + i`.
pub fn trace_conflict<T: Scalar>(models: &Models<'_, T>, cfg: &ConflictConfig) -> Result<ConflictTrace> {
    let c = models.pixel.cfg.num_classes;
    if c < 2 {
        return Err(Error::InvalidArgument(format!("conflict trace needs at least 2 classes, got {c}")));
    }
    if cfg.batches == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("conflict trace needs a positive sample count".into()));
    }
    let sc = SamplerConfig {
        cfg_scale: 1.0,
        ..cfg.sampler
    };
    sc.validate()?;
    let ts = linear_schedule(sc.steps);
    let mut acc = vec![Accum::default(); sc.steps];
    for i in 0..cfg.batches * cfg.batch_size {
        let y = i % c;
        let (label, alt) = (Label::Class(y), Label::Class((y + cfg.stride) % c));
        let mut z = models.initial_noise(sc.seed.wrapping_add(i as u64));
        for k in 0..sc.steps {
            let (t0, t1) = (ts[k], ts[k + 1]);
            let (v_cond, _) = models.velocity(&z, t0, label, &sc.clamp)?;
            let (v_alt, _) = models.velocity(&z, t0, alt, &sc.clamp)?;
            let (v_uncond, _) = models.velocity(&z, t0, Label::Null, &sc.clamp)?;
            match (pairwise_conflict(&v_cond, &v_alt), cfg_rel_distance(&v_cond, &v_uncond)) {
                (Ok(p), Ok(r)) => {
                    acc[k].pair.push(p);
                    acc[k].rel.push(r);
                }
                _ => acc[k].missing += 1,
            }
            z = match sc.solver {
                Solver::Euler => euler_step(&z, t0, t1, &v_cond)?,
                Solver::Heun => heun_step_from(&z, t0, t1, &v_cond, |zp, t| Ok(models.velocity(zp, t, label, &sc.clamp)?.0))?,
            };
            if !z.is_finite() {
                return Err(Error::Numerical { step: k });
            }
        }
    }
    let points = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let (c_pair_mean, c_pair_std) = mean_std(&a.pair);
            let (c_rel_mean, c_rel_std) = mean_std(&a.rel);
            ConflictPoint {
                step: k,
                t: ts[k],
                c_pair_mean,
                c_pair_std,
                c_rel_mean,
                c_rel_std,
                missing: a.missing,
            }
        })
        .collect();
    Ok(ConflictTrace { points })
}
