//! Parameter blobs with a JSON metadata sidecar.
//!
//! `<dir>/<name>.ckpt` holds the parameters as little-endian `f32` tensors,
//! `<dir>/<name>.meta.json` holds the model config, role and run metadata.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};

const MAGIC: &[u8; 8] = b"SIKDCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
    Baseline,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
            Role::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_config: ModelConfig,
    pub role: Role,
    /// SHA-256 of the resolved training config JSON.
    pub train_config_digest: String,
    pub epoch: usize,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

/// What a caller requires of a checkpoint it loads.
#[derive(Debug, Clone, Copy, Default)]
pub struct Expectation {
    pub num_classes: Option<usize>,
    pub in_channels: Option<usize>,
}

/// Sidecar path for a checkpoint path: `x/best.ckpt` -> `x/best.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn save_checkpoint(net: &Network<f32>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    if &meta.model_config != net.config() {
        return Err(Error::ConfigMismatch(
            "checkpoint metadata does not describe the network being saved".into(),
        ));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut blob = Vec::with_capacity(16 + 4 * net.param_count());
    blob.extend_from_slice(MAGIC);
    blob.extend_from_slice(&VERSION.to_le_bytes());
    let count = tensor_count(net) as u32;
    blob.extend_from_slice(&count.to_le_bytes());
    let mut put = |name: &str, shape: &[usize], value: &[f32]| {
        blob.extend_from_slice(&(name.len() as u32).to_le_bytes());
        blob.extend_from_slice(name.as_bytes());
        blob.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            blob.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in value {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    net.visit_params(&mut |p| put(&p.name, &p.shape, &p.value));
    net.visit_buffers(&mut |b| put(&b.name, &b.shape, &b.value));
    fs::write(path, &blob).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::json(&side, e))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

/// Parameters followed by normalization buffers.
fn tensor_count(net: &Network<f32>) -> usize {
    let mut n = 0;
    net.visit_params(&mut |_| n += 1);
    net.visit_buffers(&mut |_| n += 1);
    n
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated parameter blob".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&side, e))
}

/// Loads a checkpoint, checking it against `expect`.
pub fn load_checkpoint(path: &Path, expect: Expectation) -> Result<(Network<f32>, CheckpointMeta)> {
    let meta = read_meta(path)?;
    let cfg: &ModelConfig = &meta.model_config;
    if let Some(k) = expect.num_classes.filter(|&k| k != cfg.num_classes) {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint {} has num_classes {}, expected {k}",
            path.display(),
            cfg.num_classes
        )));
    }
    if let Some(c) = expect.in_channels.filter(|&c| c != cfg.in_channels) {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint {} has in_channels {}, expected {c}",
            path.display(),
            cfg.in_channels
        )));
    }
    let mut net = Network::<f32>::new(cfg)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint blob", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported blob version {version}")));
    }
    let count = r.u32()? as usize;
    let expected_count = tensor_count(&net);
    if count != expected_count {
        return Err(Error::Checkpoint(format!(
            "blob has {count} tensors, config implies {expected_count}"
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, shape, values));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameter blob".into()));
    }
    let mut problem = None;
    let mut it = tensors.into_iter();
    let mut assign = |p_name: &str, p_shape: &[usize], target: &mut Vec<f32>| {
        let (name, shape, values) = it.next().expect("count checked");
        if problem.is_none() && (name != p_name || shape != p_shape) {
            problem = Some(format!("tensor {name} {shape:?} does not match {p_name} {p_shape:?}"));
        }
        if problem.is_none() {
            *target = values;
        }
    };
    net.visit_params_mut(&mut |p| assign(&p.name, &p.shape, &mut p.value));
    net.visit_buffers_mut(&mut |b| assign(&b.name, &b.shape, &mut b.value));
    if let Some(msg) = problem {
        return Err(Error::ConfigMismatch(msg));
    }
    Ok((net, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn meta(cfg: &ModelConfig) -> CheckpointMeta {
        CheckpointMeta {
            model_config: cfg.clone(),
            role: Role::Teacher,
            train_config_digest: "abc".into(),
            epoch: 3,
            metrics: BTreeMap::from([("val_dice".to_string(), 0.5)]),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig {
            base_width: 4,
            depth: 2,
            ..Default::default()
        };
        let mut net = Network::<f32>::new(&cfg).unwrap();
        let x = Tensor::from_vec([1, 1, 8, 8], (0..64).map(|i| i as f32 / 64.0).collect()).unwrap();
        // A training pass moves the running statistics away from their defaults.
        net.forward_train(&x).unwrap();
        let path = dir.path().join("ck/best.ckpt");
        save_checkpoint(&net, &meta(&cfg), &path).unwrap();
        assert!(dir.path().join("ck/best.meta.json").exists());
        let (loaded, m) = load_checkpoint(&path, Expectation::default()).unwrap();
        assert_eq!(m, meta(&cfg));
        assert_eq!(m.role, Role::Teacher);
        let mut buffers = (Vec::new(), Vec::new());
        net.visit_buffers(&mut |b| buffers.0.push(b.clone()));
        loaded.visit_buffers(&mut |b| buffers.1.push(b.clone()));
        assert_eq!(buffers.0, buffers.1);
        assert!(buffers.0.iter().any(|b| b.value.iter().any(|&v| v != 0.0 && v != 1.0)));
        let a = net.forward(&x).unwrap();
        let b = loaded.forward(&x).unwrap();
        assert_eq!(a.logits.max_abs_diff(&b.logits), 0.0);
        assert_eq!(a.penultimate, b.penultimate);
    }

    #[test]
    fn mismatch_and_corruption_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig {
            base_width: 2,
            depth: 1,
            ..Default::default()
        };
        let net = Network::<f32>::new(&cfg).unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&net, &meta(&cfg), &path).unwrap();
        let err = load_checkpoint(
            &path,
            Expectation {
                num_classes: Some(5),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch(_)), "{err}");

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_checkpoint(&path, Expectation::default()),
            Err(Error::Checkpoint(_))
        ));
        fs::write(&path, b"garbage").unwrap();
        assert!(load_checkpoint(&path, Expectation::default()).is_err());
    }
}
