//! Closed-form conditional-variance decomposition on isotropic Gaussian mixtures.
//!
//! With `x ~ Σ_k w_k N(μ_k, σ_k² I)` and `z = t·x + (1-t)·ε`, each component
//! stays Gaussian in `z`: `z | k ~ N(t·μ_k, s_k² I)` with
//! `s_k² = t²σ_k² + (1-t)²`. Given `z` and `k`,
//!
//! ```text
//! E[x | z, k]   = μ_k + (t σ_k² / s_k²)(z - t μ_k)
//! Var(x | z, k) = σ_k² (1-t)² / s_k²      (per dimension)
//! ```
//!
//! Grouping components by their semantic tag gives `E[x | z, s_0]` and
//! `Var(x | z, s_0)`, from which the two terms of the total-variance identity
//! follow. All variances are traces (summed over dimensions).

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub label: usize,
    /// Semantic tag; components sharing a tag share an `s_0`.
    pub tag: i64,
    pub mean: Vec<f64>,
    pub std: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
}

impl MixtureSpec {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.components.is_empty() || d == 0 {
            return Err(Error::InvalidArgument("mixture needs a non-empty component list".into()));
        }
        for (i, c) in self.components.iter().enumerate() {
            if c.mean.len() != d {
                return Err(Error::Dimension(format!("component {i} has dimension {}, expected {d}", c.mean.len())));
            }
            if !(c.weight > 0.0) || !(c.std >= 0.0) || !c.std.is_finite() || c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidArgument(format!("component {i}: bad weight, std or mean")));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("mixture spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Built-in specs by name: `two-point`, `four-class`, `shared-tag`.
    pub fn preset(name: &str) -> Result<Self> {
        let comp = |label, tag, mean: Vec<f64>, std, weight| MixtureComponent {
            label,
            tag,
            mean,
            std,
            weight,
        };
        let spec = match name {
            "two-point" => Self {
                components: vec![comp(0, -1, vec![-1.0], 0.0, 0.5), comp(1, 1, vec![1.0], 0.0, 0.5)],
            },
            "four-class" => Self {
                components: vec![
                    comp(0, 0, vec![1.0, 1.0, 0.0, 0.0], 0.3, 0.25),
                    comp(1, 0, vec![1.0, -1.0, 0.0, 0.0], 0.3, 0.25),
                    comp(2, 1, vec![-1.0, 0.0, 1.0, 0.5], 0.3, 0.25),
                    comp(3, 1, vec![-1.0, 0.0, -1.0, -0.5], 0.3, 0.25),
                ],
            },
            "shared-tag" => Self {
                components: (0..6)
                    .map(|k| {
                        let mean = (0..8).map(|j| ((k * 8 + j) as f64 * 0.7).sin()).collect();
                        let weight = [0.1, 0.2, 0.15, 0.25, 0.2, 0.1][k];
                        comp(k, (k % 3) as i64, mean, [0.0, 0.2, 0.5][k % 3], weight)
                    })
                    .collect(),
            },
            _ => return Err(Error::Config(format!("unknown mixture preset `{name}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub const PRESETS: [&'static str; 3] = ["two-point", "four-class", "shared-tag"];
}

/// Conditional moments of `x` at one noisy point `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDecomposition {
    /// `tr Var(x | z)`.
    pub total: f64,
    /// `Σ_g p(g|z) · tr Var(x | z, g)`.
    pub within: f64,
    /// `Σ_g p(g|z) · ‖E[x | z, g] - E[x | z]‖²`.
    pub between: f64,
    /// Component posteriors `p(k | z)`.
    pub posterior: Vec<f64>,
    /// `E[x | z, k]` per component.
    pub means: Vec<Vec<f64>>,
    /// Per-dimension `Var(x | z, k)` per component.
    pub variances: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1)")));
    }
    Ok(())
}

/// Exact moments of `x | z` and of `x | z, s_0` at time `t ∈ [0, 1)`.
pub fn decompose_at(mix: &MixtureSpec, t: f64, z: &[f64]) -> Result<PointDecomposition> {
    check_t(t)?;
    let d = mix.dim();
    if z.len() != d {
        return Err(Error::shape(&[d], &[z.len()]));
    }
    let u = 1.0 - t;
    let mut logp = Vec::with_capacity(mix.components.len());
    let mut means = Vec::with_capacity(mix.components.len());
    let mut variances = Vec::with_capacity(mix.components.len());
    for c in &mix.components {
        let s2 = t * t * c.std * c.std + u * u;
        let centred: Vec<f64> = z.iter().zip(&c.mean).map(|(zi, m)| zi - t * m).collect();
        let r2: f64 = centred.iter().map(|x| x * x).sum();
        logp.push(c.weight.ln() - 0.5 * r2 / s2 - 0.5 * d as f64 * (2.0 * std::f64::consts::PI * s2).ln());
        let gain = t * c.std * c.std / s2;
        means.push(c.mean.iter().zip(&centred).map(|(m, e)| m + gain * e).collect::<Vec<f64>>());
        variances.push(c.std * c.std * u * u / s2);
    }
    let top = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut posterior: Vec<f64> = logp.iter().map(|l| (l - top).exp()).collect();
    let norm: f64 = posterior.iter().sum();
    posterior.iter_mut().for_each(|p| *p /= norm);

    let mixture_mean = |idx: &[usize], w: f64| -> Vec<f64> {
        (0..d).map(|j| idx.iter().map(|&k| posterior[k] * means[k][j]).sum::<f64>() / w).collect()
    };
    let second_moment = |idx: &[usize], w: f64| -> f64 {
        idx.iter()
            .map(|&k| posterior[k] * (d as f64 * variances[k] + means[k].iter().map(|x| x * x).sum::<f64>()))
            .sum::<f64>()
            / w
    };

    let all: Vec<usize> = (0..posterior.len()).collect();
    let m = mixture_mean(&all, 1.0);
    let total = (second_moment(&all, 1.0) - m.iter().map(|x| x * x).sum::<f64>()).max(0.0);

    let mut tags: Vec<i64> = mix.components.iter().map(|c| c.tag).collect();
    tags.sort_unstable();
    tags.dedup();
    let (mut within, mut between) = (0.0, 0.0);
    for tag in tags {
        let idx: Vec<usize> = all.iter().copied().filter(|&k| mix.components[k].tag == tag).collect();
        let w: f64 = idx.iter().map(|&k| posterior[k]).sum();
        if w <= 0.0 {
            continue;
        }
        let mg = mixture_mean(&idx, w);
        let vg = (second_moment(&idx, w) - mg.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        within += w * vg;
        between += w * sq_dist(&mg, &m);
    }
    Ok(PointDecomposition {
        total,
        within,
        between,
        posterior,
        means,
        variances,
    })
}

/// Averages of the decomposition over `z` drawn from the mixture's noisy marginal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub t: f64,
    pub num_z: usize,
    pub num_x_per_z: usize,
    /// `E_z[tr Var(x | z)]`.
    pub e_standard: f64,
    /// `E_z[E_{s_0|z} tr Var(x | z, s_0)]`.
    pub e_oracle: f64,
    /// `E_z[Var_{s_0|z} E[x | z, s_0]]`.
    pub cross_term: f64,
    /// `|e_standard - (e_oracle + cross_term)| / e_standard`; 0 when `e_standard` is 0.
    pub residual: f64,
    /// `e_standard` estimated from posterior samples of `x`, when `num_x_per_z ≥ 2`.
    pub e_standard_sampled: Option<f64>,
}

/// Draws `num_z` noisy points and averages the exact per-point decomposition.
///
/// With `num_x_per_z ≥ 2`, also draws that many posterior samples of `x` per
/// point and reports the average unbiased sample variance.
pub fn variance_decomposition<R: Rng + ?Sized>(
    mix: &MixtureSpec,
    t: f64,
    num_z: usize,
    num_x_per_z: usize,
    rng: &mut R,
) -> Result<VarianceReport> {
    mix.validate()?;
    check_t(t)?;
    if num_z == 0 {
        return Err(Error::InvalidArgument("num_z must be positive".into()));
    }
    let d = mix.dim();
    let pick = WeightedIndex::new(mix.components.iter().map(|c| c.weight))
        .map_err(|e| Error::InvalidArgument(format!("mixture weights: {e}")))?;
    let (mut total, mut within, mut between, mut sampled) = (0.0, 0.0, 0.0, 0.0);
    let mut z = vec![0.0; d];
    for _ in 0..num_z {
        let c = &mix.components[pick.sample(rng)];
        for (zj, m) in z.iter_mut().zip(&c.mean) {
            let x = m + c.std * rng.sample::<f64, _>(StandardNormal);
            *zj = t * x + (1.0 - t) * rng.sample::<f64, _>(StandardNormal);
        }
        let p = decompose_at(mix, t, &z)?;
        total += p.total;
        within += p.within;
        between += p.between;
        if num_x_per_z >= 2 {
            let post = WeightedIndex::new(&p.posterior)
                .map_err(|e| Error::Undefined(format!("posterior weights: {e}")))?;
            let xs: Vec<Vec<f64>> = (0..num_x_per_z)
                .map(|_| {
                    let k = post.sample(rng);
                    let s = p.variances[k].sqrt();
                    p.means[k].iter().map(|m| m + s * rng.sample::<f64, _>(StandardNormal)).collect()
                })
                .collect();
            let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / num_x_per_z as f64).collect();
            let ss: f64 = xs.iter().map(|x| sq_dist(x, &mean)).sum();
            sampled += ss / (num_x_per_z - 1) as f64;
        }
    }
    let n = num_z as f64;
    let (e_standard, e_oracle, cross_term) = (total / n, within / n, between / n);
    let residual = if e_standard > 0.0 {
        (e_standard - (e_oracle + cross_term)).abs() / e_standard
    } else {
        (e_oracle + cross_term).abs()
    };
    Ok(VarianceReport {
        t,
        num_z,
        num_x_per_z,
        e_standard,
        e_oracle,
        cross_term,
        residual,
        e_standard_sampled: (num_x_per_z >= 2).then_some(sampled / n),
    })
}
