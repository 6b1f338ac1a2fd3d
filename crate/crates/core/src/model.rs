//! Compact U-Net style encoder-decoder with a skip-connection toggle and a
//! penultimate feature tap.
//!
//! The teacher is built with `skip_connections = false`: its decoder consumes
//! only the upsampled path, so the penultimate features must carry all the
//! shape information. Teacher and student otherwise share the exact layer
//! layout, and the penultimate block always has `base_width` channels at
//! full input resolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::nn::{
    max_pool2, max_pool2_backward, BatchStats, Buffer, Conv2d, ConvCache, DoubleConv, DoubleConvCache, Mode, Param, PoolCache,
    UpCache, UpConv,
};
use crate::tensor::{Real, Tensor};

/// Activation grid `N x D x H x W`; houses the penultimate features.
pub type FeatureBlock<T = f32> = Tensor<T>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub skip_connections: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            in_channels: 1,
            base_width: 16,
            depth: 2,
            skip_connections: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::validation("model depth must be at least 1"));
        }
        if self.base_width == 0 {
            return Err(Error::validation("model base_width must be at least 1"));
        }
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(Error::validation(format!(
                "in_channels must be 1 or 3, got {}",
                self.in_channels
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::validation(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Channel width of encoder level `level`; `level == depth` is the bottleneck.
    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    /// The same architecture with a different skip setting and seed.
    pub fn variant(&self, skip_connections: bool, seed: u64) -> Self {
        Self {
            skip_connections,
            seed,
            ..self.clone()
        }
    }
}

/// Logits and penultimate features of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput<T = f32> {
    /// `N x K x H x W`
    pub logits: Tensor<T>,
    /// `N x base_width x H x W`, the input of the final 1x1 convolution.
    pub penultimate: FeatureBlock<T>,
}

#[derive(Debug, Clone)]
pub struct Network<T = f32> {
    config: ModelConfig,
    encoders: Vec<DoubleConv<T>>,
    bottleneck: DoubleConv<T>,
    /// `ups[i]` maps level `i + 1` to level `i`.
    ups: Vec<UpConv<T>>,
    decoders: Vec<DoubleConv<T>>,
    head: Conv2d<T>,
}

/// Everything `backward` needs from a training-mode forward pass.
pub struct ForwardCache<T> {
    encoders: Vec<DoubleConvCache<T>>,
    pools: Vec<PoolCache>,
    bottleneck: DoubleConvCache<T>,
    ups: Vec<UpCache<T>>,
    decoders: Vec<DoubleConvCache<T>>,
    head: ConvCache<T>,
}

impl<T: Real> Network<T> {
    /// Builds and deterministically initializes a network from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.depth;
        let mut encoders = Vec::with_capacity(d);
        for level in 0..d {
            let input = if level == 0 { config.in_channels } else { config.width(level - 1) };
            encoders.push(DoubleConv::new(&format!("enc{level}"), input, config.width(level), &mut rng));
        }
        let bottleneck = DoubleConv::new("bottleneck", config.width(d - 1), config.width(d), &mut rng);
        let mut ups = Vec::with_capacity(d);
        let mut decoders = Vec::with_capacity(d);
        for level in (0..d).rev() {
            let w = config.width(level);
            ups.push(UpConv::new(&format!("up{level}"), config.width(level + 1), w, &mut rng));
            let input = if config.skip_connections { 2 * w } else { w };
            decoders.push(DoubleConv::new(&format!("dec{level}"), input, w, &mut rng));
        }
        ups.reverse();
        decoders.reverse();
        let head = Conv2d::new("head", config.width(0), config.num_classes, 1, 1.0, &mut rng);
        Ok(Self {
            config: config.clone(),
            encoders,
            bottleneck,
            ups,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Visits parameters in a fixed order: encoders, bottleneck, then
    /// decoder levels from the bottom up, then the head.
    pub fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        for e in &self.encoders {
            e.visit_params(f);
        }
        self.bottleneck.visit_params(f);
        for level in (0..self.config.depth).rev() {
            self.ups[level].visit_params(f);
            self.decoders[level].visit_params(f);
        }
        self.head.visit_params(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for e in &mut self.encoders {
            e.visit_params_mut(f);
        }
        self.bottleneck.visit_params_mut(f);
        for level in (0..self.config.depth).rev() {
            self.ups[level].visit_params_mut(f);
            self.decoders[level].visit_params_mut(f);
        }
        self.head.visit_params_mut(f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    /// `(name, shape)` of every parameter tensor in visiting order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push((p.name.clone(), p.shape.clone())));
        out
    }

    /// Flat copy of every parameter value in visiting order.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.extend_from_slice(&p.value));
        out
    }

    /// Visits normalization buffers in the same layer order as parameters.
    pub fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        for e in &self.encoders {
            e.visit_buffers(f);
        }
        self.bottleneck.visit_buffers(f);
        for level in (0..self.config.depth).rev() {
            self.decoders[level].visit_buffers(f);
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        for e in &mut self.encoders {
            e.visit_buffers_mut(f);
        }
        self.bottleneck.visit_buffers_mut(f);
        for level in (0..self.config.depth).rev() {
            self.decoders[level].visit_buffers_mut(f);
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [n, c, h, w] = x.shape();
        if n == 0 {
            return Err(Error::validation("empty batch"));
        }
        if c != self.config.in_channels {
            return Err(Error::ShapeMismatch {
                context: "network input channels".into(),
                expected: self.config.in_channels.to_string(),
                actual: c.to_string(),
            });
        }
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::validation(format!(
                "input size {h}x{w} is not a multiple of {m}; pad it first"
            )));
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn run(&self, x: &Tensor<T>, mode: Mode, keep: bool) -> Result<(NetworkOutput<T>, Option<ForwardCache<T>>, Vec<BatchStats>)> {
        self.check_input(x)?;
        let mut stats = Vec::new();
        let d = self.config.depth;
        let mut skips = Vec::with_capacity(d);
        let mut enc_caches = Vec::with_capacity(d);
        let mut pool_caches = Vec::with_capacity(d);
        let mut cur = x.clone();
        for enc in &self.encoders {
            let (s, c) = enc.forward(&cur, mode, keep, &mut stats);
            let (p, pc) = max_pool2(&s, keep);
            enc_caches.extend(c);
            pool_caches.extend(pc);
            skips.push(s);
            cur = p;
        }
        let (mut cur, bottleneck_cache) = self.bottleneck.forward(&cur, mode, keep, &mut stats);
        let mut up_caches = Vec::with_capacity(d);
        let mut dec_caches = Vec::with_capacity(d);
        for level in (0..d).rev() {
            let (u, uc) = self.ups[level].forward(&cur, keep);
            let input = if self.config.skip_connections {
                Tensor::concat_channels(&skips[level], &u)?
            } else {
                u
            };
            let (o, dc) = self.decoders[level].forward(&input, mode, keep, &mut stats);
            up_caches.extend(uc);
            dec_caches.extend(dc);
            cur = o;
        }
        up_caches.reverse();
        dec_caches.reverse();
        let (logits, head_cache) = self.head.forward(&cur, keep);
        let out = NetworkOutput {
            logits,
            penultimate: cur,
        };
        let cache = if keep {
            Some(ForwardCache {
                encoders: enc_caches,
                pools: pool_caches,
                bottleneck: bottleneck_cache.expect("cache requested"),
                ups: up_caches,
                decoders: dec_caches,
                head: head_cache.expect("cache requested"),
            })
        } else {
            None
        };
        Ok((out, cache, stats))
    }

    /// Inference-mode forward pass using running normalization statistics.
    pub fn forward(&self, x: &Tensor<T>) -> Result<NetworkOutput<T>> {
        Ok(self.run(x, Mode::Inference, false)?.0)
    }

    /// Training-mode outputs (batch statistics) without caching or updating
    /// running statistics.
    pub fn forward_batch_stats(&self, x: &Tensor<T>) -> Result<NetworkOutput<T>> {
        Ok(self.run(x, Mode::Train, false)?.0)
    }

    /// Training-mode forward pass. Keeps activations for [`Network::backward`]
    /// and folds the batch statistics into the running averages.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(NetworkOutput<T>, ForwardCache<T>)> {
        let (out, cache, stats) = self.run(x, Mode::Train, true)?;
        let mut it = stats.into_iter();
        for e in &mut self.encoders {
            e.update_running(&mut it);
        }
        self.bottleneck.update_running(&mut it);
        for level in (0..self.config.depth).rev() {
            self.decoders[level].update_running(&mut it);
        }
        Ok((out, cache.expect("cache requested")))
    }

    /// Accumulates parameter gradients given loss gradients with respect to
    /// the logits and, optionally, the penultimate features.
    pub fn backward(&mut self, cache: ForwardCache<T>, d_logits: &Tensor<T>, d_penultimate: Option<&Tensor<T>>) {
        let d = self.config.depth;
        let mut g = self.head.backward(cache.head, d_logits);
        if let Some(extra) = d_penultimate {
            g.add_assign(extra);
        }
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..d).map(|_| None).collect();
        let mut dec_caches = cache.decoders;
        let mut up_caches = cache.ups;
        for level in 0..d {
            let dc = dec_caches.remove(0);
            let uc = up_caches.remove(0);
            let din = self.decoders[level].backward(dc, &g);
            let d_up = if self.config.skip_connections {
                let w = self.config.width(level);
                let (d_skip, d_up) = din.split_channels(w);
                skip_grads[level] = Some(d_skip);
                d_up
            } else {
                din
            };
            g = self.ups[level].backward(uc, &d_up);
        }
        g = self.bottleneck.backward(cache.bottleneck, &g);
        let mut enc_caches = cache.encoders;
        let mut pool_caches = cache.pools;
        for level in (0..d).rev() {
            let pc = pool_caches.pop().expect("pool cache");
            let ec = enc_caches.pop().expect("encoder cache");
            let mut ds = max_pool2_backward(pc, &g);
            if let Some(sg) = &skip_grads[level] {
                ds.add_assign(sg);
            }
            g = self.encoders[level].backward(ec, &ds);
        }
    }
}

/// Packs images into an `N x C x H x W` tensor.
pub fn images_to_tensor<T: Real>(images: &[&RasterImage]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::validation("empty batch"))?;
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if (img.channels(), img.height(), img.width()) != (c, h, w) {
            return Err(Error::ShapeMismatch {
                context: "batch image".into(),
                expected: format!("{c}x{h}x{w}"),
                actual: format!("{}x{}x{}", img.channels(), img.height(), img.width()),
            });
        }
        data.extend(img.values().iter().map(|&v| T::from_f64(v)));
    }
    Tensor::from_vec([images.len(), c, h, w], data)
}
