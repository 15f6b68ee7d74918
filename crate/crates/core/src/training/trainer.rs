//! The two training stages and their checkpoints.
//!
//! Randomness is drawn per step from three ChaCha8 streams derived from the
//! seed and the global step index: one for times and label drops, one for
//! image noise and one for semantic noise. Batches come from a seeded
//! shuffle per epoch. A run resumed from a checkpoint therefore continues
//! with exactly the draws an uninterrupted run would have made.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{image_to_patches, BackboneConfig, PixelGenerator};
use crate::data::checkpoint::Checkpoint;
use crate::data::config::{backbone_from_kv, backbone_to_kv, KvReader};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{interpolate, sample_time, velocity_loss_on_graph, Label};
use crate::nn::{Gradients, Graph, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::config::TrainConfig;
use crate::training::optim::{ema_update, lr_schedule, optimizer_step, AdamState, EmaShadow};
use crate::waypoints::{FeatureExtractor, ToyFeatureExtractor, WaypointGenerator, WaypointProjection};

pub const WAYPOINTS_KIND: &str = "waypoints";
pub const PIXEL_KIND: &str = "pixel";
pub const PROJECTION_KIND: &str = "projection";

/// One optimizer step's summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "step,epoch,loss,lr,grad_norm";

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{},{},{:e},{:e},{:e}", self.step, self.epoch, self.loss, self.lr, self.grad_norm)?;
        Ok(())
    }
}

/// The three random streams of one step.
struct StepRngs {
    time: ChaCha8Rng,
    image: ChaCha8Rng,
    semantic: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl StepRngs {
    fn new(seed: u64, step: usize) -> Self {
        let base = step as u64 * 3;
        Self {
            time: stream(seed, base),
            image: stream(seed, base + 1),
            semantic: stream(seed, base + 2),
        }
    }
}

/// Optimizer, EMA and step counter shared by both stages.
#[derive(Debug, Clone)]
struct Progress<T> {
    cfg: TrainConfig,
    adam: AdamState<T>,
    ema: EmaShadow<T>,
    step: usize,
    len: usize,
}

impl<T: Scalar> Progress<T> {
    fn new(cfg: TrainConfig, params: &ParamStore<T>, len: usize) -> Result<Self> {
        cfg.validate()?;
        if len == 0 {
            return Err(Error::InsufficientData("training set is empty".into()));
        }
        Ok(Self {
            adam: AdamState::new(params),
            ema: EmaShadow::new(params, cfg.ema_decay)?,
            cfg,
            step: 0,
            len,
        })
    }

    fn steps_per_epoch(&self) -> usize {
        self.len.div_ceil(self.cfg.batch_size)
    }

    fn total_steps(&self) -> usize {
        let full = self.cfg.epochs * self.steps_per_epoch();
        self.cfg.max_steps.map_or(full, |m| m.min(full))
    }

    fn epoch(&self) -> usize {
        self.step / self.steps_per_epoch()
    }

    /// Dataset indices of the current step's batch.
    fn batch(&self) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut stream(self.cfg.seed, (1 << 62) | self.epoch() as u64));
        let start = (self.step % spe) * self.cfg.batch_size;
        order[start..(start + self.cfg.batch_size).min(self.len)].to_vec()
    }

    /// Draws `t` and the (possibly dropped) label of one sample.
    fn draw_time_label(&self, rngs: &mut StepRngs, y: usize) -> (f64, Label) {
        let t = sample_time(&self.cfg.time, &mut rngs.time);
        let drop = rngs.time.random::<f64>() < self.cfg.label_drop_prob;
        (t, if drop { Label::Null } else { Label::Class(y) })
    }

    /// Averages per-sample gradients, applies AdamW and the EMA.
    fn apply(&mut self, params: &mut ParamStore<T>, losses: &[f64], grads: &[Gradients<T>]) -> Result<StepRecord> {
        let scale = T::of(1.0 / grads.len() as f64);
        params.zero_grad();
        for g in grads {
            params.accumulate(g, scale)?;
        }
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical { step: self.step });
        }
        let grad_norm = params.grad_norm().as_f64();
        let lr = lr_schedule(self.step, self.steps_per_epoch(), self.cfg.base_lr, self.cfg.warmup_epochs);
        optimizer_step(params, &mut self.adam, lr, &self.cfg.adam)?;
        ema_update(&mut self.ema, params)?;
        let rec = StepRecord {
            step: self.step,
            epoch: self.epoch(),
            loss,
            lr,
            grad_norm,
        };
        if self.cfg.log_every > 0 && self.step % self.cfg.log_every == 0 {
            log::info!("step {} epoch {} loss {:.6e} lr {:.3e} grad-norm {:.3e}", rec.step, rec.epoch, loss, lr, grad_norm);
        }
        self.step += 1;
        Ok(rec)
    }

    fn save(&self, ckpt: &mut Checkpoint, params: &ParamStore<T>) {
        let mut kv = std::mem::take(&mut ckpt.config);
        self.cfg.to_kv(&mut kv);
        kv.insert("step".into(), self.step.to_string());
        kv.insert("adam_step".into(), self.adam.step.to_string());
        ckpt.config = kv;
        put_store(ckpt, "params/", params.iter());
        put_store(ckpt, "ema/", self.ema.params.iter());
        put_store(ckpt, "adam.m/", self.adam.m.iter().map(|(k, v)| (k.as_str(), v)));
        put_store(ckpt, "adam.v/", self.adam.v.iter().map(|(k, v)| (k.as_str(), v)));
    }

    fn restore(ckpt: &Checkpoint, r: &mut KvReader<'_>, len: usize) -> Result<(Self, ParamStore<T>)> {
        let base = TrainConfig::new(BackboneConfig::desk_pixel(2));
        let cfg = TrainConfig::read(r, base)?;
        let step: usize = r.require("step")?;
        let adam_step: u64 = r.require("adam_step")?;
        let params = load_store(ckpt, "params/")?;
        let ema = EmaShadow {
            decay: cfg.ema_decay,
            params: load_store(ckpt, "ema/")?,
        };
        let adam = AdamState {
            m: load_store::<T>(ckpt, "adam.m/")?.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            v: load_store::<T>(ckpt, "adam.v/")?.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            step: adam_step,
        };
        let mut p = Progress::new(cfg, &params, len)?;
        p.adam = adam;
        p.ema = ema;
        p.step = step;
        Ok((p, params))
    }
}

pub(crate) fn put_store<'a, T: Scalar>(ckpt: &mut Checkpoint, prefix: &str, it: impl Iterator<Item = (&'a str, &'a Tensor<T>)>) {
    for (name, t) in it {
        ckpt.push(format!("{prefix}{name}"), t.cast());
    }
}

/// Every tensor under `prefix`, as a parameter store.
pub fn load_store<T: Scalar>(ckpt: &Checkpoint, prefix: &str) -> Result<ParamStore<T>> {
    let mut s = ParamStore::new();
    for (name, t) in ckpt.with_prefix(prefix) {
        s.insert(name, t.cast())?;
    }
    if s.is_empty() {
        return Err(Error::Config(format!("checkpoint has no `{prefix}` tensors")));
    }
    Ok(s)
}

fn check_same_names<T: Scalar>(a: &ParamStore<T>, b: &ParamStore<T>) -> Result<()> {
    let mismatch = a.len() != b.len() || a.iter().any(|(k, v)| b.get(k).map_or(true, |w| w.shape() != v.shape()));
    if mismatch {
        return Err(Error::Config("checkpoint parameters do not match the model configuration".into()));
    }
    Ok(())
}

/// Writes the projection and the extractor settings that produced it.
pub fn projection_checkpoint<T: Scalar>(proj: &WaypointProjection<T>, extractor: &ToyFeatureExtractor) -> Checkpoint {
    let mut c = Checkpoint::new(PROJECTION_KIND);
    put_projection(&mut c, proj, extractor);
    c
}

fn put_projection<T: Scalar>(c: &mut Checkpoint, proj: &WaypointProjection<T>, extractor: &ToyFeatureExtractor) {
    c.set("extractor.patch_size", extractor.patch_size());
    c.set("extractor.dim", extractor.feature_dim());
    c.set("extractor.seed", extractor.seed());
    c.push("proj/basis", proj.basis.cast());
    c.push("proj/mean", proj.mean.cast());
    c.push("proj/scales", proj.scales.cast());
    c.push("proj/variances", proj.variances.cast());
}

/// Reads a projection and rebuilds its extractor from any checkpoint that carries one.
pub fn read_projection<T: Scalar>(c: &Checkpoint) -> Result<(WaypointProjection<T>, ToyFeatureExtractor)> {
    let mut r = KvReader::new(&c.config);
    let extractor = ToyFeatureExtractor::new(
        r.require("extractor.patch_size")?,
        r.require("extractor.dim")?,
        r.require("extractor.seed")?,
    )?;
    let proj = WaypointProjection {
        basis: c.tensor("proj/basis")?.cast(),
        mean: c.tensor("proj/mean")?.cast(),
        scales: c.tensor("proj/scales")?.cast(),
        variances: c.tensor("proj/variances")?.cast(),
    };
    if proj.basis.shape() != [extractor.feature_dim(), proj.dim()] {
        return Err(Error::Dimension("projection basis does not match the extractor width".into()));
    }
    Ok((proj, extractor))
}

/// Clean waypoint targets `s_0` for every image.
pub fn waypoint_targets<T: Scalar>(
    data: &Dataset<T>,
    extractor: &ToyFeatureExtractor,
    proj: &WaypointProjection<T>,
) -> Result<Vec<Tensor<T>>> {
    data.images.iter().map(|x| proj.project_normalized(&extractor.extract(x)?)).collect()
}

/// Stage one: semantic velocity matching for the waypoint generator.
#[derive(Debug, Clone)]
pub struct WaypointTrainer<T> {
    pub model: WaypointGenerator<T>,
    pub data: Dataset<T>,
    pub targets: Vec<Tensor<T>>,
    pub projection: WaypointProjection<T>,
    pub extractor: ToyFeatureExtractor,
    progress: Progress<T>,
}

impl<T: Scalar> WaypointTrainer<T> {
    /// Fresh model from `cfg.model`, initialized with `cfg.seed`.
    pub fn new(
        cfg: TrainConfig,
        data: Dataset<T>,
        projection: WaypointProjection<T>,
        extractor: ToyFeatureExtractor,
    ) -> Result<Self> {
        let model = WaypointGenerator::new(cfg.model, cfg.seed)?;
        Self::assemble(cfg, model, data, projection, extractor)
    }

    fn assemble(
        cfg: TrainConfig,
        model: WaypointGenerator<T>,
        data: Dataset<T>,
        projection: WaypointProjection<T>,
        extractor: ToyFeatureExtractor,
    ) -> Result<Self> {
        let m = &cfg.model;
        if extractor.patch_size() != m.patch_size {
            return Err(Error::Dimension(format!(
                "extractor patch {} does not match generator patch {}",
                extractor.patch_size(),
                m.patch_size
            )));
        }
        if data.image_size != m.image_size || data.num_classes != m.num_classes {
            return Err(Error::Dimension(format!(
                "dataset ({} px, {} classes) does not match the model ({} px, {} classes)",
                data.image_size, data.num_classes, m.image_size, m.num_classes
            )));
        }
        if projection.dim() != m.waypoint_dim || projection.feature_dim() != extractor.feature_dim() {
            return Err(Error::Dimension("projection does not match the waypoint or feature width".into()));
        }
        let targets = waypoint_targets(&data, &extractor, &projection)?;
        let progress = Progress::new(cfg, &model.params, data.len())?;
        Ok(Self {
            model,
            data,
            targets,
            projection,
            extractor,
            progress,
        })
    }

    pub fn step_index(&self) -> usize {
        self.progress.step
    }

    pub fn total_steps(&self) -> usize {
        self.progress.total_steps()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.progress.steps_per_epoch()
    }

    pub fn ema(&self) -> &ParamStore<T> {
        &self.progress.ema.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.progress.cfg
    }

    /// Loss and parameter gradients of one sample.
    pub fn sample_loss(&self, x: &Tensor<T>, s0: &Tensor<T>, t: f64, y: Label, eps_img: &Tensor<T>, eps_sem: &Tensor<T>) -> Result<(f64, Gradients<T>)> {
        let tt = T::of(t);
        let clamp = &self.progress.cfg.clamp;
        let z_t = interpolate(x, eps_img, tt)?;
        let z_sem = interpolate(s0, eps_sem, tt)?;
        let inv = T::one() / clamp.denominator(tt);
        let target = s0.zip_map(&z_sem, |a, b| (a - b) * inv)?;
        let mut g = Graph::new(&self.model.params);
        let s_hat = self.model.forward(&mut g, &z_t, t, y)?;
        let loss = velocity_loss_on_graph(&mut g, s_hat, &z_sem, &target, tt, clamp)?;
        Ok((g.value(loss).item()?.as_f64(), g.backward(loss)?))
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let p = &self.progress;
        let mut rngs = StepRngs::new(p.cfg.seed, p.step);
        let sigma = T::of(self.model.cfg.noise_scale());
        let (mut losses, mut grads) = (Vec::new(), Vec::new());
        for i in p.batch() {
            let (t, y) = p.draw_time_label(&mut rngs, self.data.labels[i]);
            let x = &self.data.images[i];
            let eps_img = Tensor::randn(x.shape(), sigma, &mut rngs.image);
            let eps_sem = Tensor::randn(self.targets[i].shape(), T::one(), &mut rngs.semantic);
            let (l, g) = self.sample_loss(x, &self.targets[i], t, y, &eps_img, &eps_sem)?;
            losses.push(l);
            grads.push(g);
        }
        self.progress.apply(&mut self.model.params, &losses, &grads)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(WAYPOINTS_KIND);
        put_projection(&mut c, &self.projection, &self.extractor);
        self.progress.save(&mut c, &self.model.params);
        c
    }

    /// Continues a run from its checkpoint on the same data.
    pub fn resume(ckpt: &Checkpoint, data: Dataset<T>) -> Result<Self> {
        ckpt.expect_kind(WAYPOINTS_KIND)?;
        let (projection, extractor) = read_projection(ckpt)?;
        let mut r = KvReader::new(&ckpt.config);
        for k in ["kind", "extractor.patch_size", "extractor.dim", "extractor.seed"] {
            r.skip(k);
        }
        let (progress, params) = Progress::restore(ckpt, &mut r, data.len())?;
        r.finish()?;
        let fresh = WaypointGenerator::<T>::new(progress.cfg.model, 0)?;
        check_same_names(&fresh.params, &params)?;
        let model = WaypointGenerator::from_params(progress.cfg.model, params)?;
        let mut t = Self::assemble(progress.cfg, model, data, projection, extractor)?;
        t.progress = progress;
        Ok(t)
    }
}

/// The EMA waypoint generator stored in a stage-one checkpoint.
pub fn load_waypoint_generator<T: Scalar>(ckpt: &Checkpoint) -> Result<WaypointGenerator<T>> {
    ckpt.expect_kind(WAYPOINTS_KIND)?;
    let mut r = KvReader::new(&ckpt.config);
    let cfg = backbone_from_kv("model.", &mut r, BackboneConfig::desk_waypoints(2))?;
    let params = load_store(ckpt, "ema/")?;
    check_same_names(&WaypointGenerator::<T>::new(cfg, 0)?.params, &params)?;
    WaypointGenerator::from_params(cfg, params)
}

/// Stage two: pixel velocity matching under frozen waypoints.
#[derive(Debug, Clone)]
pub struct PixelTrainer<T> {
    pub model: PixelGenerator<T>,
    /// Frozen; `None` trains the baseline with zero waypoints.
    pub waypoints: Option<WaypointGenerator<T>>,
    pub data: Dataset<T>,
    progress: Progress<T>,
}

impl<T: Scalar> PixelTrainer<T> {
    pub fn new(cfg: TrainConfig, data: Dataset<T>, waypoints: Option<WaypointGenerator<T>>) -> Result<Self> {
        let model = PixelGenerator::new(cfg.model, cfg.seed)?;
        Self::assemble(cfg, model, data, waypoints)
    }

    fn assemble(cfg: TrainConfig, model: PixelGenerator<T>, data: Dataset<T>, waypoints: Option<WaypointGenerator<T>>) -> Result<Self> {
        let m = &cfg.model;
        if data.image_size != m.image_size || data.num_classes != m.num_classes {
            return Err(Error::Dimension(format!(
                "dataset ({} px, {} classes) does not match the model ({} px, {} classes)",
                data.image_size, data.num_classes, m.image_size, m.num_classes
            )));
        }
        if let Some(w) = &waypoints {
            let c = &w.cfg;
            if (c.image_size, c.patch_size, c.waypoint_dim, c.num_classes)
                != (m.image_size, m.patch_size, m.waypoint_dim, m.num_classes)
            {
                return Err(Error::Dimension(format!(
                    "waypoint generator ({} px, patch {}, d {}, {} classes) does not fit the pixel generator ({} px, patch {}, d {}, {} classes)",
                    c.image_size, c.patch_size, c.waypoint_dim, c.num_classes, m.image_size, m.patch_size, m.waypoint_dim, m.num_classes
                )));
            }
            if c.noise_reference != m.noise_reference {
                return Err(Error::Config(format!(
                    "waypoint generator noise reference {} differs from the pixel generator's {}",
                    c.noise_reference, m.noise_reference
                )));
            }
        }
        let progress = Progress::new(cfg, &model.params, data.len())?;
        Ok(Self {
            model,
            waypoints,
            data,
            progress,
        })
    }

    pub fn step_index(&self) -> usize {
        self.progress.step
    }

    pub fn total_steps(&self) -> usize {
        self.progress.total_steps()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.progress.steps_per_epoch()
    }

    pub fn ema(&self) -> &ParamStore<T> {
        &self.progress.ema.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.progress.cfg
    }

    /// The EMA pixel generator.
    pub fn ema_model(&self) -> Result<PixelGenerator<T>> {
        PixelGenerator::from_params(self.model.cfg, self.progress.ema.params.clone())
    }

    /// Loss and parameter gradients of one sample; the same label reaches both generators.
    pub fn sample_loss(&self, x: &Tensor<T>, t: f64, y: Label, eps: &Tensor<T>) -> Result<(f64, Gradients<T>)> {
        let tt = T::of(t);
        let p = self.model.cfg.patch_size;
        let z_t = interpolate(x, eps, tt)?;
        let s_hat = match &self.waypoints {
            Some(w) => Some(w.predict(&z_t, t, y)?),
            None => None,
        };
        let z_patches = image_to_patches(&z_t, p)?;
        let v = image_to_patches(&x.sub(eps)?, p)?;
        let mut g = Graph::new(&self.model.params);
        let out = self.model.forward(&mut g, &z_t, t, y, s_hat.as_ref())?;
        let loss = velocity_loss_on_graph(&mut g, out.x_hat, &z_patches, &v, tt, &self.progress.cfg.clamp)?;
        Ok((g.value(loss).item()?.as_f64(), g.backward(loss)?))
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let p = &self.progress;
        let mut rngs = StepRngs::new(p.cfg.seed, p.step);
        let sigma = T::of(self.model.cfg.noise_scale());
        let (mut losses, mut grads) = (Vec::new(), Vec::new());
        for i in p.batch() {
            let (t, y) = p.draw_time_label(&mut rngs, self.data.labels[i]);
            let x = &self.data.images[i];
            let eps = Tensor::randn(x.shape(), sigma, &mut rngs.image);
            let (l, g) = self.sample_loss(x, t, y, &eps)?;
            losses.push(l);
            grads.push(g);
        }
        self.progress.apply(&mut self.model.params, &losses, &grads)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(PIXEL_KIND);
        c.set("baseline", self.waypoints.is_none());
        if let Some(w) = &self.waypoints {
            backbone_to_kv("wgen.model.", &w.cfg, &mut c.config);
            put_store(&mut c, "wgen/", w.params.iter());
        }
        self.progress.save(&mut c, &self.model.params);
        c
    }

    pub fn resume(ckpt: &Checkpoint, data: Dataset<T>) -> Result<Self> {
        ckpt.expect_kind(PIXEL_KIND)?;
        let mut r = KvReader::new(&ckpt.config);
        r.skip("kind");
        let waypoints = read_frozen_waypoints(ckpt, &mut r)?;
        let (progress, params) = Progress::restore(ckpt, &mut r, data.len())?;
        r.finish()?;
        check_same_names(&PixelGenerator::<T>::new(progress.cfg.model, 0)?.params, &params)?;
        let model = PixelGenerator::from_params(progress.cfg.model, params)?;
        let mut t = Self::assemble(progress.cfg, model, data, waypoints)?;
        t.progress = progress;
        Ok(t)
    }
}

fn read_frozen_waypoints<T: Scalar>(ckpt: &Checkpoint, r: &mut KvReader<'_>) -> Result<Option<WaypointGenerator<T>>> {
    if r.require::<bool>("baseline")? {
        return Ok(None);
    }
    let cfg = backbone_from_kv("wgen.model.", r, BackboneConfig::desk_waypoints(2))?;
    let params = load_store(ckpt, "wgen/")?;
    check_same_names(&WaypointGenerator::<T>::new(cfg, 0)?.params, &params)?;
    Ok(Some(WaypointGenerator::from_params(cfg, params)?))
}

/// The EMA pixel generator and its frozen waypoint generator from a stage-two checkpoint.
pub fn load_pixel_models<T: Scalar>(ckpt: &Checkpoint) -> Result<(PixelGenerator<T>, Option<WaypointGenerator<T>>)> {
    ckpt.expect_kind(PIXEL_KIND)?;
    let mut r = KvReader::new(&ckpt.config);
    let waypoints = read_frozen_waypoints(ckpt, &mut r)?;
    let cfg = backbone_from_kv("model.", &mut r, BackboneConfig::desk_pixel(2))?;
    let params = load_store(ckpt, "ema/")?;
    check_same_names(&PixelGenerator::<T>::new(cfg, 0)?.params, &params)?;
    Ok((PixelGenerator::from_params(cfg, params)?, waypoints))
}

/// What a training loop needs from either stage.
pub trait Stage {
    fn step(&mut self) -> Result<StepRecord>;
    fn step_index(&self) -> usize;
    fn total_steps(&self) -> usize;
    fn steps_per_epoch(&self) -> usize;
    fn to_checkpoint(&self) -> Checkpoint;
}

macro_rules! impl_stage {
    ($ty:ident) => {
        impl<T: Scalar> Stage for $ty<T> {
            fn step(&mut self) -> Result<StepRecord> {
                $ty::step(self)
            }
            fn step_index(&self) -> usize {
                $ty::step_index(self)
            }
            fn total_steps(&self) -> usize {
                $ty::total_steps(self)
            }
            fn steps_per_epoch(&self) -> usize {
                $ty::steps_per_epoch(self)
            }
            fn to_checkpoint(&self) -> Checkpoint {
                $ty::to_checkpoint(self)
            }
        }
    };
}

impl_stage!(WaypointTrainer);
impl_stage!(PixelTrainer);

/// Runs the remaining steps. `on_step` sees every record and whether it closed an epoch or the run.
pub fn fit<S: Stage>(stage: &mut S, mut on_step: impl FnMut(&S, &StepRecord, bool) -> Result<()>) -> Result<()> {
    let total = stage.total_steps();
    let spe = stage.steps_per_epoch();
    while stage.step_index() < total {
        let rec = stage.step()?;
        let boundary = (rec.step + 1) % spe == 0 || rec.step + 1 == total;
        on_step(stage, &rec, boundary)?;
    }
    Ok(())
}
