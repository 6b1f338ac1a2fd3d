//! Raster images, label maps and sample pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `H x W x C` intensity grid with values in `[0, 1]`.
///
/// Storage is planar: channel `c`, row `y`, column `x` lives at
/// `c * H * W + y * W + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::validation(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                context: "image buffer".into(),
                expected: format!("{} values", height * width * channels),
                actual: format!("{} values", values.len()),
            });
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!(
                "image value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    /// A constant image.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds a grayscale image from rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::validation("ragged image rows"));
        }
        Self::new(height, width, 1, rows.concat())
    }

    /// Clamps every value to `[0, 1]`; non-finite values become 0.
    pub fn from_unclamped(
        height: usize,
        width: usize,
        channels: usize,
        mut values: Vec<f64>,
    ) -> Result<Self> {
        for v in &mut values {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self::new(height, width, channels, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.plane()..(c + 1) * self.plane()]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[c * self.plane() + y * self.width + x]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mirrors the image left-to-right.
    pub fn flip_horizontal(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.values.chunks(self.width) {
            values.extend(row.iter().rev());
        }
        Self { values, ..*self }
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { values, ..*self }
    }
}

/// An `H x W` grid of class ids in `[0, K)`. Class 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: usize,
    ids: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, ids: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation(format!(
                "label map dimensions must be positive, got {height}x{width}"
            )));
        }
        if !(1..=256).contains(&num_classes) {
            return Err(Error::validation(format!(
                "num_classes must be in 1..=256, got {num_classes}"
            )));
        }
        if ids.len() != height * width {
            return Err(Error::ShapeMismatch {
                context: "label buffer".into(),
                expected: format!("{} ids", height * width),
                actual: format!("{} ids", ids.len()),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= num_classes) {
            return Err(Error::validation(format!(
                "label id {bad} is not below num_classes {num_classes}"
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            ids,
        })
    }

    pub fn from_rows(rows: &[&[u8]], num_classes: usize) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::validation("ragged label rows"));
        }
        Self::new(height, width, num_classes, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.ids[y * self.width + x]
    }

    /// Pixel count of every class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &id in &self.ids {
            counts[id as usize] += 1;
        }
        counts
    }

    /// Binary mask of the pixels labelled `k`.
    pub fn mask(&self, k: u8) -> Vec<bool> {
        self.ids.iter().map(|&id| id == k).collect()
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut ids = Vec::with_capacity(self.ids.len());
        for row in self.ids.chunks(self.width) {
            ids.extend(row.iter().rev());
        }
        Self { ids, ..*self }
    }

    pub fn same_size(&self, image: &RasterImage) -> bool {
        self.height == image.height() && self.width == image.width()
    }
}

pub(crate) fn check_pair(image: &RasterImage, label: &LabelMap) -> Result<()> {
    if !label.same_size(image) {
        return Err(Error::ShapeMismatch {
            context: "image/label pair".into(),
            expected: format!("{}x{}", image.height(), image.width()),
            actual: format!("{}x{}", label.height(), label.width()),
        });
    }
    Ok(())
}

/// An image with its ground truth and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub image: RasterImage,
    pub label: LabelMap,
    pub sample_id: String,
    /// Which corpus the sample came from, e.g. `intra` or `cross`.
    pub domain_tag: String,
}

impl SamplePair {
    pub fn new(
        image: RasterImage,
        label: LabelMap,
        sample_id: impl Into<String>,
        domain_tag: impl Into<String>,
    ) -> Result<Self> {
        check_pair(&image, &label)?;
        Ok(Self {
            image,
            label,
            sample_id: sample_id.into(),
            domain_tag: domain_tag.into(),
        })
    }
}

/// Per-axis physical pixel size, `[row, column]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelSpacing(pub [f64; 2]);

impl Default for PixelSpacing {
    fn default() -> Self {
        PixelSpacing([1.0, 1.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(RasterImage::new(1, 2, 1, vec![0.0, 1.5]).is_err());
        assert!(RasterImage::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(RasterImage::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn rejects_large_ids() {
        assert!(LabelMap::from_rows(&[&[0, 3]], 3).is_err());
        assert!(LabelMap::from_rows(&[&[0, 2]], 3).is_ok());
    }

    #[test]
    fn pair_requires_matching_sizes() {
        let img = RasterImage::filled(2, 2, 1, 0.5).unwrap();
        let lab = LabelMap::new(2, 3, 2, vec![0; 6]).unwrap();
        assert!(SamplePair::new(img, lab, "a", "intra").is_err());
    }

    #[test]
    fn flip_is_an_involution() {
        let img = RasterImage::from_rows(&[&[0.1, 0.2, 0.3], &[0.4, 0.5, 0.6]]).unwrap();
        assert_eq!(img.flip_horizontal().get(0, 0, 0), 0.3);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        let lab = LabelMap::from_rows(&[&[0, 1, 2]], 3).unwrap();
        assert_eq!(lab.flip_horizontal().ids(), &[2, 1, 0]);
    }
}
