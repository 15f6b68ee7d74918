//! The pixel generator: patch embedding, conditioning, modulated blocks, readout.

pub mod block;
pub mod embed;
pub mod patch;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{noise_scale_at, Label, NOISE_REFERENCE};
use crate::nn::layers::{init_linear, linear, AttentionConfig, Init};
use crate::nn::params::{trunc_normal, INIT_STD};
use crate::nn::{Graph, ParamStore, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use block::{global_adaln_block, just_pixel_adaln_block, modulate, modulation, Modulation};
pub use embed::{build_spatial_condition, embed_condition, timestep_features};
pub use patch::{image_to_patches, patches_to_image, position_embedding};

/// Where the predicted waypoint enters the pixel generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Injection {
    /// Per-token modulation from `c_s = e(t, y) + Proj(s_hat)`.
    #[default]
    JustPixelAdaLn,
    /// Waypoint channels appended to each raw patch vector before embedding.
    ChannelConcat,
    /// Projected waypoint tokens appended to the sequence and dropped before readout.
    InContext,
}

impl Injection {
    pub fn name(self) -> &'static str {
        match self {
            Injection::JustPixelAdaLn => "just-pixel-adaln",
            Injection::ChannelConcat => "channel-concat",
            Injection::InContext => "in-context",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "just-pixel-adaln" => Ok(Injection::JustPixelAdaLn),
            "channel-concat" => Ok(Injection::ChannelConcat),
            "in-context" => Ok(Injection::InContext),
            _ => Err(Error::Config(format!("unknown injection `{s}`"))),
        }
    }
}

/// Architecture of either generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    pub depth: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub patch_size: usize,
    pub bottleneck: usize,
    pub num_classes: usize,
    pub image_size: usize,
    pub waypoint_dim: usize,
    pub time_freq_dim: usize,
    pub mlp_ratio: usize,
    pub injection: Injection,
    /// Pixel noise std is `image_size / noise_reference`.
    pub noise_reference: usize,
}

impl BackboneConfig {
    /// 32×32 pixel generator used by the command-line defaults.
    pub fn desk_pixel(num_classes: usize) -> Self {
        Self {
            depth: 4,
            hidden_dim: 128,
            heads: 4,
            patch_size: 8,
            bottleneck: 128,
            num_classes,
            image_size: 32,
            waypoint_dim: 16,
            time_freq_dim: 256,
            mlp_ratio: 4,
            injection: Injection::JustPixelAdaLn,
            noise_reference: NOISE_REFERENCE,
        }
    }

    /// Waypoint generator matching [`Self::desk_pixel`].
    pub fn desk_waypoints(num_classes: usize) -> Self {
        Self {
            depth: 2,
            hidden_dim: 64,
            heads: 4,
            ..Self::desk_pixel(num_classes)
        }
    }

    /// 256×256 base model, patch 16: depth 12, width 768, 12 heads.
    pub fn base_256(num_classes: usize) -> Self {
        Self {
            depth: 12,
            hidden_dim: 768,
            heads: 12,
            patch_size: 16,
            bottleneck: 128,
            num_classes,
            image_size: 256,
            waypoint_dim: 64,
            time_freq_dim: 256,
            mlp_ratio: 4,
            injection: Injection::JustPixelAdaLn,
            noise_reference: NOISE_REFERENCE,
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Standard deviation of the pixel noise `eps_img`.
    pub fn noise_scale(&self) -> f64 {
        noise_scale_at(self.image_size, self.noise_reference)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            hidden_dim: self.hidden_dim,
            heads: self.heads,
            depth: self.depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        let positive = [
            self.patch_size,
            self.bottleneck,
            self.num_classes,
            self.image_size,
            self.waypoint_dim,
            self.time_freq_dim,
            self.mlp_ratio,
            self.noise_reference,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidArgument(format!("zero extent in {self:?}")));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Dimension(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.hidden_dim % 4 != 0 {
            return Err(Error::Dimension(format!("hidden_dim {} not divisible by 4", self.hidden_dim)));
        }
        if self.time_freq_dim % 2 != 0 {
            return Err(Error::Dimension(format!("time_freq_dim {} is odd", self.time_freq_dim)));
        }
        Ok(())
    }
}

pub(crate) fn block_prefix(i: usize) -> String {
    format!("blocks.{i:02}")
}

/// Checks `z_t` against the configured image size and splits it into patches.
pub(crate) fn patchify_input<T: Scalar>(cfg: &BackboneConfig, z_t: &Tensor<T>) -> Result<Tensor<T>> {
    let s = cfg.image_size;
    if z_t.shape() != [s, s, 3] {
        return Err(Error::shape(&[s, s, 3], z_t.shape()));
    }
    image_to_patches(z_t, cfg.patch_size)
}

/// Checks a waypoint tensor against the token grid and waypoint width.
pub(crate) fn check_waypoint<T: Scalar>(cfg: &BackboneConfig, s: &Tensor<T>) -> Result<()> {
    if s.shape() != [cfg.tokens(), cfg.waypoint_dim] {
        return Err(Error::shape(&[cfg.tokens(), cfg.waypoint_dim], s.shape()));
    }
    Ok(())
}

/// Values recorded by one pixel-generator forward pass.
#[derive(Debug, Clone)]
pub struct PixelForward {
    /// Predicted clean image in patch layout, `[N, p²·3]`.
    pub x_hat: Var,
    /// Hidden sequence entering each block, followed by the last block's output.
    pub hidden: Vec<Var>,
}

/// The pixel generator `G(z_t, t, y, s_hat) → x_hat`.
#[derive(Debug, Clone)]
pub struct PixelGenerator<T> {
    pub cfg: BackboneConfig,
    pub params: ParamStore<T>,
    pos: Tensor<T>,
}

impl<T: Scalar> PixelGenerator<T> {
    /// Freshly initialized model; every modulation map and the last readout layer are zero.
    pub fn new(cfg: BackboneConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.hidden_dim;
        let patch_in = match cfg.injection {
            Injection::ChannelConcat => cfg.patch_dim() + cfg.waypoint_dim,
            _ => cfg.patch_dim(),
        };
        patch::init_patch_embed(&mut store, "patch", patch_in, cfg.bottleneck, d, &mut rng)?;
        embed::init_condition(&mut store, cfg.time_freq_dim, d, cfg.num_classes, &mut rng)?;
        match cfg.injection {
            Injection::JustPixelAdaLn | Injection::InContext => {
                store.insert("waypoint.proj.weight", trunc_normal(&[cfg.waypoint_dim, d], INIT_STD, &mut rng))?;
            }
            Injection::ChannelConcat => {}
        }
        for i in 0..cfg.depth {
            block::init_block(&mut store, &block_prefix(i), d, cfg.mlp_ratio, &mut rng)?;
        }
        store.insert("final.norm.gain", Tensor::full(&[d], T::one()))?;
        init_linear(&mut store, "final.proj1", d, cfg.bottleneck, true, Init::TruncNormal, &mut rng)?;
        init_linear(&mut store, "final.proj2", cfg.bottleneck, cfg.patch_dim(), true, Init::Zeros, &mut rng)?;
        Self::from_params(cfg, store)
    }

    /// Wraps an existing parameter set, e.g. one read from a checkpoint.
    pub fn from_params(cfg: BackboneConfig, params: ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let pos = position_embedding(cfg.grid(), cfg.hidden_dim)?;
        Ok(Self { cfg, params, pos })
    }

    /// Records the forward pass on `g`, which must read from `self.params`.
    ///
    /// `s_hat` is the predicted waypoint `[N, d]`; `None` feeds zeros.
    pub fn forward(
        &self,
        g: &mut Graph<'_, T>,
        z_t: &Tensor<T>,
        t: f64,
        y: Label,
        s_hat: Option<&Tensor<T>>,
    ) -> Result<PixelForward> {
        let cfg = &self.cfg;
        let n = cfg.tokens();
        let patches = patchify_input(cfg, z_t)?;
        let zeros;
        let s = match s_hat {
            Some(s) => s,
            None => {
                zeros = Tensor::zeros(&[n, cfg.waypoint_dim]);
                &zeros
            }
        };
        check_waypoint(cfg, s)?;
        let e = embed_condition(g, t, y, cfg.time_freq_dim, cfg.num_classes)?;
        let s = g.constant(s.clone());
        let att = cfg.attention();
        let mut hidden = Vec::with_capacity(cfg.depth + 1);

        let mut h = match cfg.injection {
            Injection::ChannelConcat => {
                let p = g.constant(patches);
                let p = g.concat_cols(p, s)?;
                patch::patch_embed(g, p, "patch", &self.pos)?
            }
            _ => {
                let p = g.constant(patches);
                patch::patch_embed(g, p, "patch", &self.pos)?
            }
        };
        match cfg.injection {
            Injection::JustPixelAdaLn => {
                let c_s = build_spatial_condition(g, e, s, n)?;
                for i in 0..cfg.depth {
                    hidden.push(h);
                    h = just_pixel_adaln_block(g, h, c_s, &block_prefix(i), &att)?;
                }
            }
            Injection::ChannelConcat => {
                for i in 0..cfg.depth {
                    hidden.push(h);
                    h = global_adaln_block(g, h, e, &block_prefix(i), &att)?;
                }
            }
            Injection::InContext => {
                let w = g.param("waypoint.proj.weight")?;
                let wt = g.linear(s, w, None)?;
                let pos = g.constant(self.pos.clone());
                let wt = g.add(wt, pos)?;
                h = g.concat_rows(h, wt)?;
                for i in 0..cfg.depth {
                    hidden.push(h);
                    h = global_adaln_block(g, h, e, &block_prefix(i), &att)?;
                }
                hidden.push(h);
                h = g.slice_rows(h, 0, n)?;
            }
        }
        if hidden.len() == cfg.depth {
            hidden.push(h);
        }
        let gain = g.param("final.norm.gain")?;
        let o = g.rms_norm(h, Some(gain))?;
        let o = linear(g, o, "final.proj1")?;
        let x_hat = linear(g, o, "final.proj2")?;
        Ok(PixelForward { x_hat, hidden })
    }

    /// Predicted clean image `[H, W, 3]`.
    pub fn predict(&self, z_t: &Tensor<T>, t: f64, y: Label, s_hat: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut g = Graph::frozen(&self.params);
        let out = self.forward(&mut g, z_t, t, y, s_hat)?;
        let s = self.cfg.image_size;
        patches_to_image(g.value(out.x_hat), self.cfg.patch_size, s, s)
    }
}

/// Predicted clean image for `(z_t, t, y, s_hat)`; see [`PixelGenerator::predict`].
pub fn pixel_generator_forward<T: Scalar>(
    model: &PixelGenerator<T>,
    z_t: &Tensor<T>,
    t: f64,
    y: Label,
    s_hat: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    model.predict(z_t, t, y, s_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny(injection: Injection) -> BackboneConfig {
        BackboneConfig {
            depth: 2,
            hidden_dim: 16,
            heads: 2,
            patch_size: 4,
            bottleneck: 8,
            num_classes: 3,
            image_size: 8,
            waypoint_dim: 4,
            time_freq_dim: 8,
            mlp_ratio: 2,
            injection,
            noise_reference: NOISE_REFERENCE,
        }
    }

    #[test]
    fn fresh_model_predicts_zero_with_image_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for inj in [Injection::JustPixelAdaLn, Injection::ChannelConcat, Injection::InContext] {
            let m = PixelGenerator::<f64>::new(tiny(inj), 3).unwrap();
            let z = Tensor::randn(&[8, 8, 3], 1.0, &mut rng);
            let s = Tensor::randn(&[4, 4], 1.0, &mut rng);
            let x = m.predict(&z, 0.3, Label::Class(1), Some(&s)).unwrap();
            assert_eq!(x.shape(), &[8, 8, 3]);
            assert_eq!(x.max_abs(), 0.0);
        }
    }

    #[test]
    fn wrong_shapes_and_labels_are_rejected() {
        let m = PixelGenerator::<f64>::new(tiny(Injection::JustPixelAdaLn), 0).unwrap();
        let z = Tensor::zeros(&[8, 8, 3]);
        assert!(m.predict(&Tensor::zeros(&[4, 4, 3]), 0.5, Label::Null, None).is_err());
        assert!(m.predict(&z, 0.5, Label::Class(3), None).is_err());
        assert!(m.predict(&z, 0.5, Label::Null, Some(&Tensor::zeros(&[4, 5]))).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(Injection::JustPixelAdaLn);
        c.image_size = 10;
        assert!(c.validate().is_err());
        let mut c = tiny(Injection::JustPixelAdaLn);
        c.heads = 3;
        assert!(c.validate().is_err());
        assert!(BackboneConfig::base_256(1000).validate().is_ok());
        assert_eq!(BackboneConfig::desk_pixel(4).tokens(), 16);
        assert_eq!(Injection::parse("in-context").unwrap(), Injection::InContext);
        assert!(Injection::parse("bogus").is_err());
    }
}
