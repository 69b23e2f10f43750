//! DenseNet-style convolutional encoder shared by both viewers.

use rand::Rng;

use super::nn::{Conv, Norm};
use crate::dataset::Image;
use crate::error::{Error, Result};
use crate::tensor::{Conv2dSpec, Float, Graph, ParamStore, PoolKind, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub growth_rate: usize,
    pub block_layers: Vec<usize>,
    pub initial_channels: usize,
    /// Transition compression, in `(0, 1]`.
    pub reduction: f64,
    /// 2× average pool after the stem convolution.
    pub stem_pool: bool,
    /// How many transitions, counted from the first, end in a 2× pool. The
    /// rest only compress channels.
    pub pooled_transitions: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            growth_rate: 12,
            block_layers: vec![4, 4, 4],
            initial_channels: 24,
            reduction: 0.5,
            stem_pool: true,
            pooled_transitions: 1,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("backbone: {m}")));
        if self.growth_rate == 0 {
            return bad("growth_rate must be at least 1");
        }
        if self.block_layers.is_empty() || self.block_layers.contains(&0) {
            return bad("every dense block needs at least one layer");
        }
        if self.initial_channels == 0 {
            return bad("initial_channels must be at least 1");
        }
        if !(self.reduction > 0.0 && self.reduction <= 1.0) {
            return bad("reduction must lie in (0, 1]");
        }
        if self.pooled_transitions >= self.block_layers.len() && self.pooled_transitions > 0 {
            return bad("more pooled transitions than transitions");
        }
        Ok(())
    }

    /// Channels leaving a transition that receives `c`.
    fn transition(&self, c: usize) -> usize {
        ((c as f64 * self.reduction).floor() as usize).max(1)
    }

    /// Channels of the output feature map.
    pub fn out_channels(&self) -> usize {
        let mut c = self.initial_channels;
        for (i, &n) in self.block_layers.iter().enumerate() {
            c += n * self.growth_rate;
            if i + 1 < self.block_layers.len() {
                c = self.transition(c);
            }
        }
        c
    }

    pub fn total_stride(&self) -> usize {
        2 * if self.stem_pool { 2 } else { 1 } * (1 << self.pooled_transitions)
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let s = self.total_stride();
        (h.div_ceil(s), w.div_ceil(s))
    }
}

#[derive(Debug, Clone)]
struct DenseLayer {
    norm: Norm,
    conv: Conv,
}

#[derive(Debug, Clone)]
struct Transition {
    norm: Norm,
    conv: Conv,
    pool: bool,
}

/// Parameter handles of a backbone.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    stem: Conv,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    final_norm: Norm,
}

impl Backbone {
    pub fn new<F: Float>(store: &mut ParamStore<F>, cfg: &BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let stem = Conv::new(
            store,
            "backbone.stem",
            1,
            cfg.initial_channels,
            7,
            Conv2dSpec { stride: 2, padding: 3 },
            false,
            rng,
        );
        let mut c = cfg.initial_channels;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (bi, &n) in cfg.block_layers.iter().enumerate() {
            let mut layers = Vec::new();
            for li in 0..n {
                let name = format!("backbone.block{bi}.layer{li}");
                layers.push(DenseLayer {
                    norm: Norm::new(store, &format!("{name}.norm"), c),
                    conv: Conv::new(store, &format!("{name}.conv"), c, cfg.growth_rate, 3, Conv2dSpec::same(3), false, rng),
                });
                c += cfg.growth_rate;
            }
            blocks.push(layers);
            if bi + 1 < cfg.block_layers.len() {
                let out = cfg.transition(c);
                let name = format!("backbone.transition{bi}");
                transitions.push(Transition {
                    norm: Norm::new(store, &format!("{name}.norm"), c),
                    conv: Conv::new(store, &format!("{name}.conv"), c, out, 1, Conv2dSpec::UNIT, false, rng),
                    pool: bi < cfg.pooled_transitions,
                });
                c = out;
            }
        }
        let final_norm = Norm::new(store, "backbone.final_norm", c);
        Ok(Backbone {
            cfg: cfg.clone(),
            stem,
            blocks,
            transitions,
            final_norm,
        })
    }

    /// `(1, H, W)` image tensor → `(C', H', W')` features.
    pub fn forward<'g, F: Float>(&self, g: &'g Graph<F>, store: &ParamStore<F>, x: Var<'g, F>) -> Result<Var<'g, F>> {
        let s = x.shape();
        let stride = self.cfg.total_stride();
        if s.len() != 3 || s[0] != 1 {
            return Err(Error::shape("backbone input", &s, &[1, 0, 0]));
        }
        if s[1] < stride || s[2] < stride {
            return Err(Error::InputTooSmall {
                height: s[1],
                width: s[2],
                stride,
            });
        }
        let mut h = self.stem.forward(g, store, x)?;
        if self.cfg.stem_pool {
            h = h.pool2d(PoolKind::Avg, 2, 2)?;
        }
        for (bi, block) in self.blocks.iter().enumerate() {
            for layer in block {
                let y = layer.norm.forward(g, store, h, 0)?.relu();
                let y = layer.conv.forward(g, store, y)?;
                h = Var::concat(&[h, y], 0)?;
            }
            if let Some(t) = self.transitions.get(bi) {
                h = t.conv.forward(g, store, t.norm.forward(g, store, h, 0)?.relu())?;
                if t.pool {
                    h = h.pool2d(PoolKind::Avg, 2, 2)?;
                }
            }
        }
        Ok(self.final_norm.forward(g, store, h, 0)?.relu())
    }
}

/// An image as a `(1, H, W)` tensor.
pub fn image_tensor<F: Float>(img: &Image) -> Tensor<F> {
    Tensor::from_fn(&[1, img.height(), img.width()], |i| F::cast(img.pixels()[i] as f64))
}

/// Runs `backbone` on one image.
pub fn densenet_forward<'g, F: Float>(
    g: &'g Graph<F>,
    store: &ParamStore<F>,
    backbone: &Backbone,
    image: &Image,
) -> Result<Var<'g, F>> {
    backbone.forward(g, store, g.constant(image_tensor(image)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn desk_config_shapes() {
        let cfg = BackboneConfig::default();
        assert_eq!(cfg.total_stride(), 8);
        assert_eq!(cfg.out_channels(), 90);
        let mut store = ParamStore::<f32>::new();
        let bb = Backbone::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = Graph::inference();
        let img = Image::blank(64, 128);
        let y = densenet_forward(&g, &store, &bb, &img).unwrap();
        assert_eq!(y.shape(), vec![90, 8, 16]);
        assert!(y.value().data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn too_small() {
        let cfg = BackboneConfig::default();
        let mut store = ParamStore::<f32>::new();
        let bb = Backbone::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = Graph::inference();
        let err = densenet_forward(&g, &store, &bb, &Image::blank(64, 7)).unwrap_err();
        assert!(matches!(err, Error::InputTooSmall { stride: 8, .. }));
    }

    #[test]
    fn invalid_configs() {
        let mut c = BackboneConfig::default();
        c.growth_rate = 0;
        assert!(c.validate().is_err());
        let mut c = BackboneConfig::default();
        c.block_layers = vec![4, 0];
        assert!(c.validate().is_err());
        let mut c = BackboneConfig::default();
        c.reduction = 1.5;
        assert!(c.validate().is_err());
    }
}
