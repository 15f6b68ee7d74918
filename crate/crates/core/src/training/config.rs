//! Training hyperparameters and their `key = value` form.

use crate::backbone::BackboneConfig;
use crate::data::config::{backbone_from_kv, backbone_to_kv, KvMap, KvReader};
use crate::error::{Error, Result};
use crate::flow::{ClampConfig, TimeSamplerConfig};
use crate::training::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub adam: AdamConfig,
    pub ema_decay: f64,
    pub label_drop_prob: f64,
    pub seed: u64,
    pub time: TimeSamplerConfig,
    pub clamp: ClampConfig,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub log_every: usize,
    /// Architecture of the generator being trained.
    pub model: BackboneConfig,
}

impl TrainConfig {
    pub fn new(model: BackboneConfig) -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            base_lr: 5e-5,
            warmup_epochs: 5.0,
            adam: AdamConfig::default(),
            ema_decay: 0.9999,
            label_drop_prob: 0.1,
            seed: 0,
            time: TimeSamplerConfig::default(),
            clamp: ClampConfig::default(),
            max_steps: None,
            log_every: 10,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        let probs = [self.label_drop_prob, self.ema_decay, self.adam.beta1, self.adam.beta2];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!("probability-valued setting outside [0, 1]: {probs:?}")));
        }
        if !(self.base_lr >= 0.0) || !(self.warmup_epochs >= 0.0) || !(self.adam.eps > 0.0) || !(self.adam.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("negative learning rate, warmup, eps or weight decay".into()));
        }
        self.time.validate()?;
        self.clamp.validate()?;
        self.model.validate()
    }

    /// Overrides defaults with `key = value` settings; model keys carry a `model.` prefix.
    pub fn from_kv(map: &KvMap, base: TrainConfig) -> Result<Self> {
        let mut r = KvReader::new(map);
        let c = Self::read(&mut r, base)?;
        r.finish()?;
        Ok(c)
    }

    /// Like [`Self::from_kv`] but leaves unrelated keys for the caller.
    pub fn read(r: &mut KvReader<'_>, base: TrainConfig) -> Result<Self> {
        let mut c = base;
        r.set("epochs", &mut c.epochs)?;
        r.set("batch_size", &mut c.batch_size)?;
        r.set("lr", &mut c.base_lr)?;
        r.set("warmup_epochs", &mut c.warmup_epochs)?;
        r.set("beta1", &mut c.adam.beta1)?;
        r.set("beta2", &mut c.adam.beta2)?;
        r.set("adam_eps", &mut c.adam.eps)?;
        r.set("weight_decay", &mut c.adam.weight_decay)?;
        r.set("ema_decay", &mut c.ema_decay)?;
        r.set("label_drop", &mut c.label_drop_prob)?;
        r.set("seed", &mut c.seed)?;
        r.set("time_mu", &mut c.time.mu)?;
        r.set("time_sigma", &mut c.time.sigma)?;
        r.set("tau_eps", &mut c.clamp.tau_eps)?;
        r.set("log_every", &mut c.log_every)?;
        if let Some(m) = r.get::<usize>("max_steps")? {
            c.max_steps = Some(m);
        }
        c.model = backbone_from_kv("model.", r, c.model)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self, out: &mut KvMap) {
        let mut put = |k: &str, v: String| {
            out.insert(k.to_string(), v);
        };
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", self.base_lr.to_string());
        put("warmup_epochs", self.warmup_epochs.to_string());
        put("beta1", self.adam.beta1.to_string());
        put("beta2", self.adam.beta2.to_string());
        put("adam_eps", self.adam.eps.to_string());
        put("weight_decay", self.adam.weight_decay.to_string());
        put("ema_decay", self.ema_decay.to_string());
        put("label_drop", self.label_drop_prob.to_string());
        put("seed", self.seed.to_string());
        put("time_mu", self.time.mu.to_string());
        put("time_sigma", self.time.sigma.to_string());
        put("tau_eps", self.clamp.tau_eps.to_string());
        put("log_every", self.log_every.to_string());
        if let Some(m) = self.max_steps {
            put("max_steps", m.to_string());
        }
        backbone_to_kv("model.", &self.model, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::config::parse_kv;

    #[test]
    fn kv_round_trip_and_unknown_keys() {
        let mut c = TrainConfig::new(BackboneConfig::desk_pixel(4));
        c.max_steps = Some(7);
        c.base_lr = 1e-3;
        let mut m = KvMap::new();
        c.to_kv(&mut m);
        let back = TrainConfig::from_kv(&m, TrainConfig::new(BackboneConfig::desk_waypoints(2))).unwrap();
        assert_eq!(back, c);
        let bad = parse_kv("epochs = 3\nlearning_rate = 1").unwrap();
        assert!(TrainConfig::from_kv(&bad, c).is_err());
        let bad = parse_kv("label_drop = 1.5").unwrap();
        assert!(TrainConfig::from_kv(&bad, c).is_err());
    }
}
