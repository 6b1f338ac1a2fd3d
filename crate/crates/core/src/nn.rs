//! Layers with explicit reverse-mode gradients.
//!
//! Each layer's `forward` optionally returns a cache; `backward` consumes it
//! together with the upstream gradient, accumulates parameter gradients and
//! returns the gradient with respect to the layer input.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Real, Tensor};

/// A trainable parameter and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    fn normal(name: String, shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let len = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let value = (0..len).map(|_| T::from_f64(dist.sample(rng))).collect();
        Self {
            name,
            shape,
            value,
            grad: vec![T::zero(); len],
        }
    }

    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name,
            shape,
            value: vec![T::zero(); len],
            grad: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Same-padded convolution with a square odd kernel (1x1 or 3x3), stride 1.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out, in, k, k]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

pub struct ConvCache<T> {
    /// im2col buffer of every batch item, `[in*k*k, H*W]`.
    cols: Vec<Vec<T>>,
    height: usize,
    width: usize,
}

fn im2col3<T: Real>(input: &[T], channels: usize, h: usize, w: usize, col: &mut [T]) {
    let plane = h * w;
    for c in 0..channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((c * 9) + ky * 3 + kx) * plane..][..plane];
                let x_lo = 1usize.saturating_sub(kx);
                let x_hi = (w + 1 - kx).min(w);
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let sy = sy as usize;
                    dst[..x_lo].iter_mut().for_each(|v| *v = T::zero());
                    dst[x_hi..].iter_mut().for_each(|v| *v = T::zero());
                    let sx0 = x_lo + kx - 1;
                    dst[x_lo..x_hi].copy_from_slice(&src[sy * w + sx0..sy * w + sx0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

fn col2im3<T: Real>(col: &[T], channels: usize, h: usize, w: usize, out: &mut [T]) {
    let plane = h * w;
    for c in 0..channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((c * 9) + ky * 3 + kx) * plane..][..plane];
                let x_lo = 1usize.saturating_sub(kx);
                let x_hi = (w + 1 - kx).min(w);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let sx0 = x_lo + kx - 1;
                    let src = &row[y * w + x_lo..y * w + x_hi];
                    for (d, &s) in dst[sy * w + sx0..].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

impl<T: Real> Conv2d<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize, gain: f64, rng: &mut impl Rng) -> Self {
        assert!(kernel == 1 || kernel == 3, "only 1x1 and 3x3 kernels are supported");
        let fan_in = (in_channels * kernel * kernel) as f64;
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::normal(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
                (gain / fan_in).sqrt(),
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels]),
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn forward(&self, x: &Tensor<T>, keep_cache: bool) -> (Tensor<T>, Option<ConvCache<T>>) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "conv input channels");
        let plane = h * w;
        let mut out = Tensor::zeros([n, self.out_channels, h, w]);
        let mut cols = Vec::new();
        for i in 0..n {
            let col = if self.kernel == 3 {
                let mut col = vec![T::zero(); self.patch_len() * plane];
                im2col3(x.item(i), c, h, w, &mut col);
                col
            } else {
                x.item(i).to_vec()
            };
            let y = out.item_mut(i);
            for (o, row) in y.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            T::gemm(
                false,
                false,
                self.out_channels,
                plane,
                self.patch_len(),
                T::one(),
                &self.weight.value,
                &col,
                T::one(),
                y,
            );
            if keep_cache {
                cols.push(col);
            }
        }
        let cache = keep_cache.then_some(ConvCache {
            cols,
            height: h,
            width: w,
        });
        (out, cache)
    }

    pub fn backward(&mut self, cache: ConvCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (cache.height, cache.width);
        let plane = h * w;
        let n = dy.batch();
        let mut dx = Tensor::zeros([n, self.in_channels, h, w]);
        let mut dcol = vec![T::zero(); self.patch_len() * plane];
        for (i, col) in cache.cols.iter().enumerate() {
            let g = dy.item(i);
            for (o, row) in g.chunks(plane).enumerate() {
                self.bias.grad[o] += row.iter().copied().sum::<T>();
            }
            // dW += dY * col^T
            T::gemm(
                false,
                true,
                self.out_channels,
                self.patch_len(),
                plane,
                T::one(),
                g,
                col,
                T::one(),
                &mut self.weight.grad,
            );
            // dcol = W^T * dY
            let target: &mut [T] = if self.kernel == 3 { &mut dcol } else { dx.item_mut(i) };
            T::gemm(
                true,
                false,
                self.patch_len(),
                plane,
                self.out_channels,
                T::one(),
                &self.weight.value,
                g,
                T::zero(),
                target,
            );
            if self.kernel == 3 {
                col2im3(&dcol, self.in_channels, h, w, dx.item_mut(i));
            }
        }
        dx
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
}

/// Rectified linear unit applied in place; the output doubles as the cache.
pub fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `dy` where the ReLU output was not positive.
pub fn relu_backward<T: Real>(output: &Tensor<T>, dy: &mut Tensor<T>) {
    for (g, &y) in dy.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max pooling with stride 2.
pub struct PoolCache {
    /// Flat input index of every output element's maximum.
    argmax: Vec<usize>,
    input_shape: [usize; 4],
}

pub fn max_pool2<T: Real>(x: &Tensor<T>, keep_cache: bool) -> (Tensor<T>, Option<PoolCache>) {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(if keep_cache { n * c * oh * ow } else { 0 });
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                dst[(p * oh + oy) * ow + ox] = src[best];
                if keep_cache {
                    argmax.push(best);
                }
            }
        }
    }
    (
        out,
        keep_cache.then_some(PoolCache {
            argmax,
            input_shape: x.shape(),
        }),
    )
}

pub fn max_pool2_backward<T: Real>(cache: PoolCache, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(cache.input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(dy.data()) {
        d[idx] += g;
    }
    dx
}

/// 2x2 transposed convolution with stride 2 (learned 2x upsampling).
#[derive(Debug, Clone)]
pub struct UpConv<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out, 2, 2, in]`, i.e. a `(out*4) x in` matrix.
    pub weight: Param<T>,
    pub bias: Param<T>,
}

pub struct UpCache<T> {
    input: Tensor<T>,
}

impl<T: Real> UpConv<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: Param::normal(
                format!("{name}.weight"),
                vec![out_channels, 2, 2, in_channels],
                (2.0 / in_channels as f64).sqrt(),
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, keep_cache: bool) -> (Tensor<T>, Option<UpCache<T>>) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "upconv input channels");
        let plane = h * w;
        let rows = self.out_channels * 4;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Tensor::zeros([n, self.out_channels, oh, ow]);
        let mut tmp = vec![T::zero(); rows * plane];
        for i in 0..n {
            T::gemm(false, false, rows, plane, c, T::one(), &self.weight.value, x.item(i), T::zero(), &mut tmp);
            let y = out.item_mut(i);
            for o in 0..self.out_channels {
                let b = self.bias.value[o];
                for a in 0..2 {
                    for bb in 0..2 {
                        let r = &tmp[(o * 4 + a * 2 + bb) * plane..][..plane];
                        for yy in 0..h {
                            let dst_row = (o * oh + 2 * yy + a) * ow;
                            for xx in 0..w {
                                y[dst_row + 2 * xx + bb] = r[yy * w + xx] + b;
                            }
                        }
                    }
                }
            }
        }
        (out, keep_cache.then(|| UpCache { input: x.clone() }))
    }

    pub fn backward(&mut self, cache: UpCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let x = cache.input;
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        let rows = self.out_channels * 4;
        let (oh, ow) = (2 * h, 2 * w);
        let mut dx = Tensor::zeros([n, c, h, w]);
        let mut gathered = vec![T::zero(); rows * plane];
        for i in 0..n {
            let g = dy.item(i);
            for o in 0..self.out_channels {
                let mut bsum = T::zero();
                for a in 0..2 {
                    for bb in 0..2 {
                        let r = &mut gathered[(o * 4 + a * 2 + bb) * plane..][..plane];
                        for yy in 0..h {
                            let src_row = (o * oh + 2 * yy + a) * ow;
                            for xx in 0..w {
                                let v = g[src_row + 2 * xx + bb];
                                r[yy * w + xx] = v;
                                bsum += v;
                            }
                        }
                    }
                }
                self.bias.grad[o] += bsum;
            }
            T::gemm(false, true, rows, c, plane, T::one(), &gathered, x.item(i), T::one(), &mut self.weight.grad);
            T::gemm(true, false, c, plane, rows, T::one(), &self.weight.value, &gathered, T::zero(), dx.item_mut(i));
        }
        dx
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
}

/// Non-trainable state saved alongside parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
}

/// Per-channel batch normalization with learned scale and shift.
///
/// Training mode normalizes with batch statistics; inference mode uses the
/// running averages, which only [`BatchNorm2d::update_running`] changes.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    pub momentum: f64,
    pub eps: f64,
}

/// Batch statistics of one training-mode pass.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    /// Elements per channel.
    pub count: usize,
}

pub struct NormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<f64>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        let buffer = |suffix: &str, v: T| Buffer {
            name: format!("{name}.{suffix}"),
            shape: vec![channels],
            value: vec![v; channels],
        };
        let mut gamma = Param::zeros(format!("{name}.gamma"), vec![channels]);
        gamma.value.iter_mut().for_each(|g| *g = T::one());
        Self {
            gamma,
            beta: Param::zeros(format!("{name}.beta"), vec![channels]),
            running_mean: buffer("running_mean", T::zero()),
            running_var: buffer("running_var", T::one()),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn apply(&self, x: &Tensor<T>, mean: &[f64], inv_std: &[f64]) -> (Tensor<T>, Tensor<T>) {
        let [n, c, _, _] = x.shape();
        let plane = x.plane();
        let mut normalized = x.clone();
        let mut y = x.clone();
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                let (g, b) = (self.gamma.value[ch].as_f64(), self.beta.value[ch].as_f64());
                for p in off..off + plane {
                    let z = (x.data()[p].as_f64() - mean[ch]) * inv_std[ch];
                    normalized.data_mut()[p] = T::from_f64(z);
                    y.data_mut()[p] = T::from_f64(g * z + b);
                }
            }
        }
        (y, normalized)
    }

    pub fn batch_stats(x: &Tensor<T>) -> BatchStats {
        let [n, c, _, _] = x.shape();
        let plane = x.plane();
        let count = n * plane;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let values = (0..n).flat_map(|i| x.item(i)[ch * plane..(ch + 1) * plane].iter());
            let m = values.clone().map(|v| v.as_f64()).sum::<f64>() / count as f64;
            mean[ch] = m;
            var[ch] = values.map(|v| (v.as_f64() - m).powi(2)).sum::<f64>() / count as f64;
        }
        BatchStats { mean, var, count }
    }

    /// Training-mode normalization with the statistics of `x`.
    pub fn forward_train(&self, x: &Tensor<T>, keep_cache: bool) -> (Tensor<T>, BatchStats, Option<NormCache<T>>) {
        let stats = Self::batch_stats(x);
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (y, normalized) = self.apply(x, &stats.mean, &inv_std);
        let cache = keep_cache.then_some(NormCache { normalized, inv_std });
        (y, stats, cache)
    }

    /// Inference-mode normalization with the running statistics.
    pub fn forward_inference(&self, x: &Tensor<T>) -> Tensor<T> {
        let mean: Vec<f64> = self.running_mean.value.iter().map(|v| v.as_f64()).collect();
        let inv_std: Vec<f64> = self
            .running_var
            .value
            .iter()
            .map(|v| 1.0 / (v.as_f64() + self.eps).sqrt())
            .collect();
        self.apply(x, &mean, &inv_std).0
    }

    /// Folds batch statistics into the running averages (unbiased variance).
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        let correction = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        for ch in 0..self.channels() {
            let rm = &mut self.running_mean.value[ch];
            *rm = T::from_f64((1.0 - m) * rm.as_f64() + m * stats.mean[ch]);
            let rv = &mut self.running_var.value[ch];
            *rv = T::from_f64((1.0 - m) * rv.as_f64() + m * stats.var[ch] * correction);
        }
    }

    pub fn backward(&mut self, cache: NormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let [n, c, _, _] = dy.shape();
        let plane = dy.plane();
        let count = (n * plane) as f64;
        let mut dx = dy.clone();
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_z = 0.0;
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for p in off..off + plane {
                    let g = dy.data()[p].as_f64();
                    sum_dy += g;
                    sum_dy_z += g * cache.normalized.data()[p].as_f64();
                }
            }
            self.beta.grad[ch] += T::from_f64(sum_dy);
            self.gamma.grad[ch] += T::from_f64(sum_dy_z);
            let scale = self.gamma.value[ch].as_f64() * cache.inv_std[ch] / count;
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for p in off..off + plane {
                    let z = cache.normalized.data()[p].as_f64();
                    let g = dy.data()[p].as_f64();
                    dx.data_mut()[p] = T::from_f64(scale * (count * g - sum_dy - z * sum_dy_z));
                }
            }
        }
        dx
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }

    pub fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        f(&self.running_mean);
        f(&self.running_var);
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

/// Whether normalization layers use batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Two (3x3 convolution, batch norm, ReLU) stages.
#[derive(Debug, Clone)]
pub struct DoubleConv<T> {
    pub first: Conv2d<T>,
    pub norm1: BatchNorm2d<T>,
    pub second: Conv2d<T>,
    pub norm2: BatchNorm2d<T>,
}

pub struct DoubleConvCache<T> {
    first: ConvCache<T>,
    norm1: NormCache<T>,
    first_out: Tensor<T>,
    second: ConvCache<T>,
    norm2: NormCache<T>,
    second_out: Tensor<T>,
}

impl<T: Real> DoubleConv<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            first: Conv2d::new(&format!("{name}.conv1"), in_channels, out_channels, 3, 2.0, rng),
            norm1: BatchNorm2d::new(&format!("{name}.norm1"), out_channels),
            second: Conv2d::new(&format!("{name}.conv2"), out_channels, out_channels, 3, 2.0, rng),
            norm2: BatchNorm2d::new(&format!("{name}.norm2"), out_channels),
        }
    }

    fn norm(
        bn: &BatchNorm2d<T>,
        x: &Tensor<T>,
        mode: Mode,
        keep: bool,
        stats: &mut Vec<BatchStats>,
    ) -> (Tensor<T>, Option<NormCache<T>>) {
        match mode {
            Mode::Inference => (bn.forward_inference(x), None),
            Mode::Train => {
                let (y, s, c) = bn.forward_train(x, keep);
                stats.push(s);
                (y, c)
            }
        }
    }

    /// In training mode the two layers' batch statistics are appended to `stats`.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        keep_cache: bool,
        stats: &mut Vec<BatchStats>,
    ) -> (Tensor<T>, Option<DoubleConvCache<T>>) {
        let (a, c1) = self.first.forward(x, keep_cache);
        let (mut a, n1) = Self::norm(&self.norm1, &a, mode, keep_cache, stats);
        relu_inplace(&mut a);
        let (b, c2) = self.second.forward(&a, keep_cache);
        let (mut b, n2) = Self::norm(&self.norm2, &b, mode, keep_cache, stats);
        relu_inplace(&mut b);
        let cache = match (c1, n1, c2, n2) {
            (Some(first), Some(norm1), Some(second), Some(norm2)) => Some(DoubleConvCache {
                first,
                norm1,
                first_out: a,
                second,
                norm2,
                second_out: b.clone(),
            }),
            _ => None,
        };
        (b, cache)
    }

    /// Consumes statistics produced by a training-mode [`DoubleConv::forward`], in order.
    pub fn update_running(&mut self, stats: &mut impl Iterator<Item = BatchStats>) {
        for bn in [&mut self.norm1, &mut self.norm2] {
            bn.update_running(&stats.next().expect("one statistics entry per norm layer"));
        }
    }

    pub fn backward(&mut self, cache: DoubleConvCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let mut g = dy.clone();
        relu_backward(&cache.second_out, &mut g);
        let g = self.norm2.backward(cache.norm2, &g);
        let mut g = self.second.backward(cache.second, &g);
        relu_backward(&cache.first_out, &mut g);
        let g = self.norm1.backward(cache.norm1, &g);
        self.first.backward(cache.first, &g)
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.first.visit_params_mut(f);
        self.norm1.visit_params_mut(f);
        self.second.visit_params_mut(f);
        self.norm2.visit_params_mut(f);
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.first.visit_params(f);
        self.norm1.visit_params(f);
        self.second.visit_params(f);
        self.norm2.visit_params(f);
    }

    pub fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        self.norm1.visit_buffers(f);
        self.norm2.visit_buffers(f);
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        self.norm1.visit_buffers_mut(f);
        self.norm2.visit_buffers_mut(f);
    }
}
