//! Synthetic shape corpora and the domain-shift transform.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::io;
use super::manifest::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::image::{LabelMap, RasterImage};
use crate::seed::{rng_for, Stream};

/// Domain tag of freshly generated corpora.
pub const INTRA_TAG: &str = "intra";

/// Period in pixels of the shift texture at `texture_frequency_scale = 1`.
pub const TEXTURE_BASE_PERIOD: f64 = 8.0;

const MAX_SHAPES: usize = 3;
const PLACEMENT_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Disks,
    Rings,
    Polygons,
    /// The shape kind is tied to the class: disk, polygon, ring, repeating.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Texture {
    /// Standard deviation of additive Gaussian noise.
    pub noise_amplitude: f64,
    /// Base intensity per class, background first.
    pub intensity_means: Vec<f64>,
    /// Peak-to-peak size of a linear illumination ramp across the image.
    pub gradient_strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub num_samples: usize,
    pub image_size: usize,
    pub num_classes: usize,
    pub shape_family: ShapeFamily,
    pub texture: Texture,
    pub seed: u64,
}

impl CorpusSpec {
    /// Evenly spaced class intensities in `[0.15, 0.85]`.
    pub fn default_means(num_classes: usize) -> Vec<f64> {
        let k = num_classes.max(2);
        (0..k).map(|i| 0.15 + 0.7 * i as f64 / (k - 1) as f64).collect()
    }

    pub fn new(num_samples: usize, image_size: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            num_samples,
            image_size,
            num_classes,
            shape_family: ShapeFamily::Mixed,
            texture: Texture {
                noise_amplitude: 0.05,
                intensity_means: Self::default_means(num_classes),
                gradient_strength: 0.0,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.num_classes) {
            return Err(Error::validation(format!(
                "num_classes must be in 2..=256, got {}",
                self.num_classes
            )));
        }
        if self.num_samples == 0 {
            return Err(Error::validation("num_samples must be positive"));
        }
        if self.image_size < 8 {
            return Err(Error::validation(format!(
                "image_size must be at least 8, got {}",
                self.image_size
            )));
        }
        let t = &self.texture;
        if t.intensity_means.len() != self.num_classes {
            return Err(Error::validation(format!(
                "intensity_means has {} entries, expected {}",
                t.intensity_means.len(),
                self.num_classes
            )));
        }
        if t.intensity_means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::validation("intensity_means must lie in [0, 1]"));
        }
        if !(t.noise_amplitude.is_finite() && t.noise_amplitude >= 0.0) {
            return Err(Error::validation("noise_amplitude must be non-negative"));
        }
        if !(t.gradient_strength.is_finite() && t.gradient_strength >= 0.0) {
            return Err(Error::validation("gradient_strength must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShapeKind {
    Disk,
    Ring,
    Polygon,
}

fn shape_kind(family: ShapeFamily, class: u8) -> ShapeKind {
    match family {
        ShapeFamily::Disks => ShapeKind::Disk,
        ShapeFamily::Rings => ShapeKind::Ring,
        ShapeFamily::Polygons => ShapeKind::Polygon,
        ShapeFamily::Mixed => [ShapeKind::Disk, ShapeKind::Polygon, ShapeKind::Ring][(class as usize - 1) % 3],
    }
}

/// Rasterizes one random shape centred at `(cy, cx)`.
fn draw_shape(kind: ShapeKind, size: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let s = size as f64;
    let r = rng.gen_range(0.12..0.24) * s;
    let cy = rng.gen_range(r..s - r);
    let cx = rng.gen_range(r..s - r);
    let mut mask = vec![false; size * size];
    match kind {
        ShapeKind::Disk | ShapeKind::Ring => {
            let inner = if kind == ShapeKind::Ring {
                r * rng.gen_range(0.4..0.55)
            } else {
                0.0
            };
            for y in 0..size {
                for x in 0..size {
                    let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                    mask[y * size + x] = d2 <= r * r && d2 > inner * inner;
                }
            }
        }
        ShapeKind::Polygon => {
            let n = rng.gen_range(3..=5);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let verts: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let a = phase + 2.0 * PI * (i as f64 + rng.gen_range(-0.2..0.2)) / n as f64;
                    let rr = r * rng.gen_range(0.85..1.0);
                    (cy + rr * a.sin(), cx + rr * a.cos())
                })
                .collect();
            for y in 0..size {
                for x in 0..size {
                    let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                    // Vertices run counter-clockwise in (x, y), so interior points
                    // are left of every edge.
                    mask[y * size + x] = (0..n).all(|i| {
                        let (ay, ax) = verts[i];
                        let (by, bx) = verts[(i + 1) % n];
                        (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0
                    });
                }
            }
        }
    }
    mask
}

/// True if `mask` touches (4-adjacently) or overlaps a foreground pixel of `ids`.
fn collides(mask: &[bool], ids: &[u8], size: usize) -> bool {
    (0..size * size).any(|i| {
        if !mask[i] {
            return false;
        }
        let (y, x) = (i / size, i % size);
        ids[i] != 0
            || (y > 0 && ids[i - size] != 0)
            || (y + 1 < size && ids[i + size] != 0)
            || (x > 0 && ids[i - 1] != 0)
            || (x + 1 < size && ids[i + 1] != 0)
    })
}

/// Renders sample `index` of `spec` before quantization.
pub fn render_sample(spec: &CorpusSpec, index: usize) -> Result<(RasterImage, LabelMap)> {
    spec.validate()?;
    let size = spec.image_size;
    let mut rng = rng_for(spec.seed, Stream::Corpus, index as u64);
    let mut ids = vec![0u8; size * size];
    let wanted = rng.gen_range(1..=MAX_SHAPES);
    let mut placed = 0;
    for _ in 0..wanted {
        let class = rng.gen_range(1..spec.num_classes) as u8;
        let kind = shape_kind(spec.shape_family, class);
        for _ in 0..PLACEMENT_ATTEMPTS {
            let mask = draw_shape(kind, size, &mut rng);
            if mask.iter().any(|&m| m) && !collides(&mask, &ids, size) {
                for (id, m) in ids.iter_mut().zip(&mask) {
                    if *m {
                        *id = class;
                    }
                }
                placed += 1;
                break;
            }
        }
    }
    if placed == 0 {
        return Err(Error::validation(format!(
            "could not place any shape in sample {index} at image size {size}"
        )));
    }

    let t = &spec.texture;
    let theta = rng.gen_range(0.0..2.0 * PI);
    let (sin, cos) = theta.sin_cos();
    let centre = size as f64 / 2.0;
    // Projection of a corner-to-corner span onto the ramp direction is at most sqrt(2)*size.
    let ramp = t.gradient_strength / (size as f64 * std::f64::consts::SQRT_2);
    let mut values = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let mut v = t.intensity_means[ids[y * size + x] as usize];
            if t.gradient_strength > 0.0 {
                v += ramp * ((x as f64 + 0.5 - centre) * cos + (y as f64 + 0.5 - centre) * sin);
            }
            if t.noise_amplitude > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                v += t.noise_amplitude * z;
            }
            values.push(v);
        }
    }
    let image = RasterImage::from_unclamped(size, size, 1, values)?;
    let label = LabelMap::new(size, size, spec.num_classes, ids)?;
    Ok((image, label))
}

fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// Writes the corpus under `root` and returns its manifest (also saved as
/// `root/manifest.json`).
pub fn generate_corpus(spec: &CorpusSpec, root: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(spec.num_samples);
    for i in 0..spec.num_samples {
        let (image, label) = render_sample(spec, i)?;
        let id = sample_id(i);
        let entry = ManifestEntry {
            image: format!("images/{id}.png"),
            label: format!("labels/{id}.png"),
            domain: INTRA_TAG.to_string(),
            id,
        };
        io::save_image(&image, &root.join(&entry.image))?;
        io::save_label(&label, &root.join(&entry.label))?;
        entries.push(entry);
    }
    let manifest = DatasetManifest::new(root, spec.num_classes, entries);
    manifest.write(&root.join("manifest.json"))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainShift {
    pub intensity_offset: f64,
    pub contrast_scale: f64,
    /// Standard deviation of extra Gaussian noise, also the amplitude of the
    /// sinusoidal texture when `texture_frequency_scale > 0`.
    pub noise_amplitude_delta: f64,
    /// Texture frequency relative to one cycle per [`TEXTURE_BASE_PERIOD`] pixels; 0 disables it.
    pub texture_frequency_scale: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self {
            intensity_offset: 0.0,
            contrast_scale: 1.0,
            noise_amplitude_delta: 0.0,
            texture_frequency_scale: 0.0,
        }
    }
}

impl DomainShift {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.intensity_offset,
            self.contrast_scale,
            self.noise_amplitude_delta,
            self.texture_frequency_scale,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("domain shift parameters must be finite"));
        }
        if self.noise_amplitude_delta < 0.0 || self.texture_frequency_scale < 0.0 {
            return Err(Error::validation(
                "noise_amplitude_delta and texture_frequency_scale must be non-negative",
            ));
        }
        Ok(())
    }

    /// Applies the shift to one image using `rng` for noise and texture draws.
    pub fn apply(&self, image: &RasterImage, rng: &mut ChaCha8Rng) -> Result<RasterImage> {
        let (h, w) = (image.height(), image.width());
        let amp = self.noise_amplitude_delta;
        let texture = if amp > 0.0 && self.texture_frequency_scale > 0.0 {
            let theta = rng.gen_range(0.0..2.0 * PI);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let k = 2.0 * PI * self.texture_frequency_scale / TEXTURE_BASE_PERIOD;
            Some((k * theta.cos(), k * theta.sin(), phase))
        } else {
            None
        };
        let mut values = Vec::with_capacity(image.values().len());
        for &v in image.values() {
            values.push(self.contrast_scale * (v - 0.5) + 0.5 + self.intensity_offset);
        }
        let plane = h * w;
        for c in 0..image.channels() {
            for i in 0..plane {
                let v = &mut values[c * plane + i];
                if let Some((kx, ky, phase)) = texture {
                    let (y, x) = ((i / w) as f64, (i % w) as f64);
                    *v += amp * (kx * x + ky * y + phase).sin();
                }
                if amp > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += amp * z;
                }
            }
        }
        RasterImage::from_unclamped(h, w, image.channels(), values)
    }
}

/// Writes a shifted copy of `source` under `out_root`.
///
/// Label files are copied byte for byte; images go through [`DomainShift::apply`]
/// with a per-sample stream derived from `seed`.
pub fn shift_corpus(
    source: &DatasetManifest,
    shift: &DomainShift,
    seed: u64,
    out_root: &Path,
    domain_tag: &str,
) -> Result<DatasetManifest> {
    shift.validate()?;
    source.validate()?;
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let mut entries = Vec::with_capacity(source.len());
    for (i, e) in source.entries.iter().enumerate() {
        let img = io::load_image(&source.image_path(e)).map_err(|err| Error::Load {
            sample_id: e.id.clone(),
            reason: err.to_string(),
        })?;
        let mut rng = rng_for(seed, Stream::Shift, i as u64);
        let shifted = shift.apply(&img, &mut rng)?;
        let entry = ManifestEntry {
            id: e.id.clone(),
            image: format!("images/{}.png", e.id),
            label: format!("labels/{}.png", e.id),
            domain: domain_tag.to_string(),
        };
        io::save_image(&shifted, &out_root.join(&entry.image))?;
        let dst = out_root.join(&entry.label);
        if let Some(dir) = dst.parent() {
            std::fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
        }
        std::fs::copy(source.label_path(e), &dst).map_err(|err| Error::io(&dst, err))?;
        entries.push(entry);
    }
    let mut manifest = source.with_entries(entries);
    manifest.root = out_root.to_path_buf();
    manifest.write(&out_root.join("manifest.json"))?;
    Ok(manifest)
}
