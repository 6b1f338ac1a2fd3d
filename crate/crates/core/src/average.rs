//! Class-wise averaging and per-class intensity statistics.
//!
//! The class-wise averaged image replaces every pixel by the mean intensity
//! of its ground-truth class, channel by channel. It keeps object shape and
//! class-level intensity while discarding texture.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{check_pair, LabelMap, RasterImage};

/// Per-class accumulator over one channel.
#[derive(Clone, Copy)]
struct ClassAccum {
    count: usize,
    anchor: f64,
    shifted_sum: f64,
    shifted_sq: f64,
    min: f64,
    max: f64,
}

impl Default for ClassAccum {
    fn default() -> Self {
        Self {
            count: 0,
            anchor: 0.0,
            shifted_sum: 0.0,
            shifted_sq: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl ClassAccum {
    fn push(&mut self, v: f64) {
        if self.count == 0 {
            self.anchor = v;
        }
        let d = v - self.anchor;
        self.count += 1;
        self.shifted_sum += d;
        self.shifted_sq += d * d;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    /// Mean anchored at the first member, so constant classes are reproduced
    /// exactly and the result never leaves the member range.
    fn mean(&self) -> f64 {
        let n = self.count as f64;
        (self.anchor + self.shifted_sum / n).clamp(self.min, self.max)
    }

    fn variance(&self) -> f64 {
        let n = self.count as f64;
        let m = self.shifted_sum / n;
        (self.shifted_sq / n - m * m).max(0.0)
    }
}

fn accumulate(image: &RasterImage, label: &LabelMap, channel: usize) -> Vec<ClassAccum> {
    let mut acc = vec![ClassAccum::default(); label.num_classes()];
    for (&v, &id) in image.channel(channel).iter().zip(label.ids()) {
        acc[id as usize].push(v);
    }
    acc
}

/// Replaces each pixel by the mean of its class, separately per channel.
///
/// Classes without pixels are simply absent. The result is exactly
/// idempotent: averaging an already averaged image returns it unchanged.
pub fn classwise_average(image: &RasterImage, label: &LabelMap) -> Result<RasterImage> {
    check_pair(image, label)?;
    let mut out = Vec::with_capacity(image.values().len());
    for c in 0..image.channels() {
        let means: Vec<f64> = accumulate(image, label, c)
            .iter()
            .map(|a| if a.count > 0 { a.mean() } else { 0.0 })
            .collect();
        out.extend(label.ids().iter().map(|&id| means[id as usize]));
    }
    Ok(image.with_values(out))
}

/// True iff within every class and channel `max - min <= tol`.
pub fn is_classwise_constant(image: &RasterImage, label: &LabelMap, tol: f64) -> Result<bool> {
    check_pair(image, label)?;
    for c in 0..image.channels() {
        let spread_ok = accumulate(image, label, c)
            .iter()
            .filter(|a| a.count > 0)
            .all(|a| a.max - a.min <= tol);
        if !spread_ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Intensity summary of one class in one channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelIntensity {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    /// Histogram counts over equal-width bins of `[0, 1]`.
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassIntensity {
    pub class: usize,
    pub pixel_count: usize,
    /// Set when the class has no pixels; means and variances are then 0.
    pub empty: bool,
    pub channels: Vec<ChannelIntensity>,
}

/// Per-class, per-channel intensity distribution of an image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityStats {
    pub bin_edges: Vec<f64>,
    pub classes: Vec<ClassIntensity>,
}

impl IntensityStats {
    pub fn class(&self, k: usize) -> &ClassIntensity {
        &self.classes[k]
    }
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor() as usize).min(bins - 1)
}

pub fn intensity_stats(image: &RasterImage, label: &LabelMap, bins: usize) -> Result<IntensityStats> {
    if bins == 0 {
        return Err(Error::validation("histogram needs at least one bin"));
    }
    check_pair(image, label)?;
    let k = label.num_classes();
    let mut classes: Vec<ClassIntensity> = (0..k)
        .map(|class| ClassIntensity {
            class,
            pixel_count: 0,
            empty: true,
            channels: Vec::with_capacity(image.channels()),
        })
        .collect();
    for c in 0..image.channels() {
        let acc = accumulate(image, label, c);
        let mut counts = vec![vec![0usize; bins]; k];
        for (&v, &id) in image.channel(c).iter().zip(label.ids()) {
            counts[id as usize][bin_of(v, bins)] += 1;
        }
        for ((entry, a), counts) in classes.iter_mut().zip(&acc).zip(counts) {
            entry.pixel_count = a.count;
            entry.empty = a.count == 0;
            let (mean, variance) = if a.count > 0 {
                (a.mean(), a.variance())
            } else {
                (0.0, 0.0)
            };
            entry.channels.push(ChannelIntensity {
                mean,
                variance,
                counts,
            });
        }
    }
    let bin_edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    Ok(IntensityStats { bin_edges, classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, k: usize) -> (RasterImage, LabelMap) {
        let vals = (0..h * w * c).map(|_| rng.gen::<f64>()).collect();
        let ids = (0..h * w).map(|_| rng.gen_range(0..k) as u8).collect();
        (
            RasterImage::new(h, w, c, vals).unwrap(),
            LabelMap::new(h, w, k, ids).unwrap(),
        )
    }

    /// Independent oracle: loop over classes, gather members, assign mean.
    fn oracle(image: &RasterImage, label: &LabelMap) -> Vec<f64> {
        let mut out = vec![f64::NAN; image.values().len()];
        for c in 0..image.channels() {
            for k in 0..label.num_classes() as u8 {
                let members: Vec<usize> = (0..label.ids().len()).filter(|&i| label.ids()[i] == k).collect();
                if members.is_empty() {
                    continue;
                }
                let mean = members.iter().map(|&i| image.channel(c)[i]).sum::<f64>() / members.len() as f64;
                for &i in &members {
                    out[c * image.plane() + i] = mean;
                }
            }
        }
        out
    }

    #[test]
    fn two_by_two_example() {
        let img = RasterImage::from_rows(&[&[0.1, 0.3], &[0.5, 0.7]]).unwrap();
        let lab = LabelMap::from_rows(&[&[0, 0], &[1, 1]], 2).unwrap();
        let out = classwise_average(&img, &lab).unwrap();
        let want = [0.2, 0.2, 0.6, 0.6];
        for (a, b) in out.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_constant_class_is_identity() {
        let img = RasterImage::filled(5, 7, 3, 0.37).unwrap();
        let lab = LabelMap::new(5, 7, 4, vec![2; 35]).unwrap();
        assert_eq!(classwise_average(&img, &lab).unwrap(), img);
    }

    #[test]
    fn matches_oracle_on_random_64() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (img, lab) = random_pair(&mut rng, 64, 64, 1, 4);
        let out = classwise_average(&img, &lab).unwrap();
        let want = oracle(&img, &lab);
        let diff = out.values().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "max diff {diff}");
    }

    #[test]
    fn rgb_channels_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (img, lab) = random_pair(&mut rng, 8, 8, 3, 3);
        let out = classwise_average(&img, &lab).unwrap();
        let want = oracle(&img, &lab);
        assert!(out.values().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn errors_on_dimension_mismatch() {
        let img = RasterImage::filled(2, 2, 1, 0.0).unwrap();
        let lab = LabelMap::new(2, 1, 2, vec![0, 1]).unwrap();
        assert!(classwise_average(&img, &lab).is_err());
        assert!(is_classwise_constant(&img, &lab, 0.0).is_err());
        assert!(intensity_stats(&img, &lab, 4).is_err());
    }

    #[test]
    fn constancy_checker_examples() {
        let img = RasterImage::from_rows(&[&[0.0, 1.0]]).unwrap();
        let same = LabelMap::from_rows(&[&[0, 0]], 2).unwrap();
        let split = LabelMap::from_rows(&[&[0, 1]], 2).unwrap();
        assert!(!is_classwise_constant(&img, &same, 1e-9).unwrap());
        assert!(is_classwise_constant(&img, &split, 0.0).unwrap());
    }

    #[test]
    fn stats_examples() {
        let img = RasterImage::filled(3, 3, 1, 0.5).unwrap();
        let lab = LabelMap::new(3, 3, 1, vec![0; 9]).unwrap();
        let s = intensity_stats(&img, &lab, 4).unwrap();
        let ch = &s.class(0).channels[0];
        assert_eq!(ch.mean, 0.5);
        assert_eq!(ch.variance, 0.0);
        assert_eq!(ch.counts, vec![0, 0, 9, 0]);

        let img = RasterImage::from_rows(&[&[0.0, 1.0]]).unwrap();
        let lab = LabelMap::from_rows(&[&[0, 1]], 3).unwrap();
        let s = intensity_stats(&img, &lab, 10).unwrap();
        assert_eq!(s.class(0).channels[0].mean, 0.0);
        assert_eq!(s.class(1).channels[0].mean, 1.0);
        assert_eq!(s.class(1).channels[0].counts[9], 1);
        assert!(s.class(2).empty);
        assert_eq!(s.class(2).pixel_count, 0);
        assert!(intensity_stats(&img, &lab, 0).is_err());
    }

    #[test]
    fn averaged_stats_preserve_means_and_zero_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (img, lab) = random_pair(&mut rng, 16, 16, 3, 4);
            let avg = classwise_average(&img, &lab).unwrap();
            let before = intensity_stats(&img, &lab, 8).unwrap();
            let after = intensity_stats(&avg, &lab, 8).unwrap();
            for (b, a) in before.classes.iter().zip(&after.classes) {
                for (cb, ca) in b.channels.iter().zip(&a.channels) {
                    assert!((cb.mean - ca.mean).abs() < 1e-9);
                    assert_eq!(ca.variance, 0.0);
                }
            }
        }
    }

    fn arb_pair() -> impl Strategy<Value = (RasterImage, LabelMap)> {
        (1usize..12, 1usize..12, prop_oneof![Just(1usize), Just(3usize)], 1usize..6, any::<u64>()).prop_map(
            |(h, w, c, k, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                random_pair(&mut rng, h, w, c, k)
            },
        )
    }

    proptest! {
        #[test]
        fn idempotent_and_range_preserving((img, lab) in arb_pair()) {
            let once = classwise_average(&img, &lab).unwrap();
            let twice = classwise_average(&once, &lab).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(img.min() <= once.min());
            prop_assert!(once.max() <= img.max());
            prop_assert!(is_classwise_constant(&once, &lab, 1e-9).unwrap());
        }

        #[test]
        fn permutation_equivariant((img, lab) in arb_pair(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let n = lab.ids().len();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let permute_img = |im: &RasterImage| {
                let mut v = Vec::with_capacity(im.values().len());
                for c in 0..im.channels() {
                    v.extend(perm.iter().map(|&p| im.channel(c)[p]));
                }
                RasterImage::new(im.height(), im.width(), im.channels(), v).unwrap()
            };
            let plab = LabelMap::new(
                lab.height(), lab.width(), lab.num_classes(),
                perm.iter().map(|&p| lab.ids()[p]).collect(),
            ).unwrap();
            let a = permute_img(&classwise_average(&img, &lab).unwrap());
            let b = classwise_average(&permute_img(&img), &plab).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn histogram_counts_sum_to_class_size((img, lab) in arb_pair(), bins in 1usize..20) {
            let s = intensity_stats(&img, &lab, bins).unwrap();
            let sizes = lab.class_counts();
            for (entry, &n) in s.classes.iter().zip(&sizes) {
                prop_assert_eq!(entry.pixel_count, n);
                for ch in &entry.channels {
                    prop_assert_eq!(ch.counts.iter().sum::<usize>(), n);
                }
            }
        }
    }
}
