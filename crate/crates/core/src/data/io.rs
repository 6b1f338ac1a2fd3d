//! 8-bit PNG encoding of images and label maps.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::image::{LabelMap, RasterImage};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Writes `image` as an 8-bit grayscale or RGB PNG.
pub fn save_image(image: &RasterImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let (w, h) = (image.width() as u32, image.height() as u32);
    let result = if image.channels() == 1 {
        let buf: GrayImage = ImageBuffer::from_fn(w, h, |x, y| Luma([quantize(image.get(0, y as usize, x as usize))]));
        buf.save(path)
    } else {
        let buf: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
            let (y, x) = (y as usize, x as usize);
            Rgb([
                quantize(image.get(0, y, x)),
                quantize(image.get(1, y, x)),
                quantize(image.get(2, y, x)),
            ])
        });
        buf.save(path)
    };
    result.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes raw class ids as an 8-bit single-channel PNG.
pub fn save_label(label: &LabelMap, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let buf = GrayImage::from_raw(label.width() as u32, label.height() as u32, label.ids().to_vec())
        .expect("buffer size matches dimensions");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an 8-bit PNG and normalizes it to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<RasterImage> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => {
            RasterImage::new(h, w, 1, g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        other => {
            let rgb = other.to_rgb8();
            let mut values = vec![0.0; 3 * h * w];
            for (i, px) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    values[c * h * w + i] = px[c] as f64 / 255.0;
                }
            }
            RasterImage::new(h, w, 3, values)
        }
    }
}

/// Reads a single-channel PNG of raw class ids.
pub fn load_label(path: &Path, num_classes: usize) -> Result<LabelMap> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => LabelMap::new(h, w, num_classes, g.into_raw()),
        other => Err(Error::validation(format!(
            "label file {} must be 8-bit single channel, found {:?}",
            path.display(),
            other.color()
        ))),
    }
}
