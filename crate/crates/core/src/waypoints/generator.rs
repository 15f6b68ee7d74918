//! The waypoint generator `W(z_t, t, y) → s_hat`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{
    block, block_prefix, check_waypoint, embed, embed_condition, global_adaln_block, patch, patchify_input,
    position_embedding, BackboneConfig,
};
use crate::error::Result;
use crate::flow::Label;
use crate::nn::layers::{init_linear, linear, Init};
use crate::nn::{Graph, ParamStore, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Small transformer under global AdaLN on `e(t, y)` with a zero-initialized
/// per-token head of width `waypoint_dim`. The `injection` field of its
/// config is ignored.
#[derive(Debug, Clone)]
pub struct WaypointGenerator<T> {
    pub cfg: BackboneConfig,
    pub params: ParamStore<T>,
    pos: Tensor<T>,
}

impl<T: Scalar> WaypointGenerator<T> {
    pub fn new(cfg: BackboneConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.hidden_dim;
        patch::init_patch_embed(&mut store, "patch", cfg.patch_dim(), cfg.bottleneck, d, &mut rng)?;
        embed::init_condition(&mut store, cfg.time_freq_dim, d, cfg.num_classes, &mut rng)?;
        for i in 0..cfg.depth {
            block::init_block(&mut store, &block_prefix(i), d, cfg.mlp_ratio, &mut rng)?;
        }
        store.insert("final.norm.gain", Tensor::full(&[d], T::one()))?;
        init_linear(&mut store, "final.proj", d, cfg.waypoint_dim, true, Init::Zeros, &mut rng)?;
        Self::from_params(cfg, store)
    }

    pub fn from_params(cfg: BackboneConfig, params: ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let pos = position_embedding(cfg.grid(), cfg.hidden_dim)?;
        Ok(Self { cfg, params, pos })
    }

    /// Records the forward pass on `g`; the result is `[N, waypoint_dim]`.
    pub fn forward(&self, g: &mut Graph<'_, T>, z_t: &Tensor<T>, t: f64, y: Label) -> Result<Var> {
        let cfg = &self.cfg;
        let patches = patchify_input(cfg, z_t)?;
        let e = embed_condition(g, t, y, cfg.time_freq_dim, cfg.num_classes)?;
        let p = g.constant(patches);
        let mut h = patch::patch_embed(g, p, "patch", &self.pos)?;
        let att = cfg.attention();
        for i in 0..cfg.depth {
            h = global_adaln_block(g, h, e, &block_prefix(i), &att)?;
        }
        let gain = g.param("final.norm.gain")?;
        let h = g.rms_norm(h, Some(gain))?;
        linear(g, h, "final.proj")
    }

    /// Predicted waypoint `[N, waypoint_dim]`.
    pub fn predict(&self, z_t: &Tensor<T>, t: f64, y: Label) -> Result<Tensor<T>> {
        let mut g = Graph::frozen(&self.params);
        let s = self.forward(&mut g, z_t, t, y)?;
        let out = g.value(s).clone();
        check_waypoint(&self.cfg, &out)?;
        Ok(out)
    }
}

/// See [`WaypointGenerator::predict`].
pub fn waypoint_generator_forward<T: Scalar>(
    model: &WaypointGenerator<T>,
    z_t: &Tensor<T>,
    t: f64,
    y: Label,
) -> Result<Tensor<T>> {
    model.predict(z_t, t, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_head_predicts_zero_waypoints() {
        let mut cfg = BackboneConfig::desk_waypoints(5);
        cfg.patch_size = 16;
        cfg.waypoint_dim = 64;
        cfg.depth = 1;
        let m = WaypointGenerator::<f64>::new(cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Tensor::randn(&[32, 32, 3], 1.0, &mut rng);
        let s = m.predict(&z, 0.4, Label::Class(2)).unwrap();
        assert_eq!(s.shape(), &[4, 64]);
        assert_eq!(s.max_abs(), 0.0);
        assert!(m.predict(&z, 0.4, Label::Null).is_ok());
        assert!(m.predict(&z, 0.4, Label::Class(5)).is_err());
    }
}
