//! On-disk dataset manifests and the sample loader.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io;
use crate::error::{Error, Result};
use crate::image::{PixelSpacing, SamplePair};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Image path relative to the manifest's directory.
    pub image: String,
    /// Label path relative to the manifest's directory.
    pub label: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub num_classes: usize,
    #[serde(default)]
    pub pixel_spacing: PixelSpacing,
    pub entries: Vec<ManifestEntry>,
    /// Directory the entry paths are relative to.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, num_classes: usize, entries: Vec<ManifestEntry>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            num_classes,
            pixel_spacing: PixelSpacing::default(),
            entries,
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.image)
    }

    pub fn label_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.label)
    }

    /// Same metadata and root, different entries.
    pub fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        Self {
            entries,
            ..self.clone()
        }
    }

    /// Checks id uniqueness, the class count and that every file exists.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::validation(format!(
                "unsupported manifest version {}",
                self.version
            )));
        }
        if !(2..=256).contains(&self.num_classes) {
            return Err(Error::validation(format!(
                "manifest num_classes must be in 2..=256, got {}",
                self.num_classes
            )));
        }
        if self.pixel_spacing.0.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::validation(format!(
                "pixel spacing must be positive, got {:?}",
                self.pixel_spacing.0
            )));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::validation(format!("duplicate sample id '{}'", e.id)));
            }
            for p in [self.image_path(e), self.label_path(e)] {
                if !p.is_file() {
                    return Err(Error::Load {
                        sample_id: e.id.clone(),
                        reason: format!("missing file {}", p.display()),
                    });
                }
            }
        }
        Ok(())
    }

    /// Reads a manifest; entry paths resolve against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(m)
    }

    /// Writes the manifest to `path`, which must live in `self.root`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let same_dir = match (dir.canonicalize(), self.root.canonicalize()) {
            (Ok(a), Ok(b)) => a == b,
            _ => dir == self.root,
        };
        if !same_dir {
            return Err(Error::validation(format!(
                "manifest for {} cannot be written to {}: entry paths are relative to the root",
                self.root.display(),
                path.display()
            )));
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Indexable reader over a manifest. Samples are decoded on access.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: DatasetManifest,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        Ok(Self { manifest })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn get(&self, index: usize) -> Result<SamplePair> {
        let e = self.manifest.entries.get(index).ok_or_else(|| {
            Error::validation(format!("sample index {index} out of range ({})", self.len()))
        })?;
        let fail = |err: Error| Error::Load {
            sample_id: e.id.clone(),
            reason: err.to_string(),
        };
        let image = io::load_image(&self.manifest.image_path(e)).map_err(fail)?;
        let label = io::load_label(&self.manifest.label_path(e), self.manifest.num_classes).map_err(fail)?;
        SamplePair::new(image, label, e.id.clone(), e.domain.clone()).map_err(fail)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<SamplePair>> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn load_all(&self) -> Result<Vec<SamplePair>> {
        self.iter().collect()
    }
}

/// Opens the manifest at `path` for lazy loading.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::new(DatasetManifest::read(path)?)
}
