//! Checkpoint evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{predict, teacher_forwards};
use crate::checkpoint::{load_checkpoint, Expectation, Role};
use crate::data::{Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::image::{PixelSpacing, RasterImage, SamplePair};
use crate::metrics::{aggregate, write_rows, Aggregation, MetricReport, MetricRow};
use crate::model::Network;

const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub role: Role,
    pub report: MetricReport,
    /// Aggregate per domain tag.
    pub per_domain: BTreeMap<String, MetricReport>,
    #[serde(skip)]
    pub rows: Vec<MetricRow>,
    /// Teacher forwards observed while evaluating; always 0.
    pub teacher_forwards: u64,
}

impl Evaluation {
    /// Writes `<dir>/<name>.csv` (per-sample rows) and `<dir>/<name>.json`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_rows(&dir.join(format!("{name}.csv")), &self.rows)?;
        let path = dir.join(format!("{name}.json"));
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Per-sample reports and rows of `net` on `samples`.
pub fn evaluate_network(
    net: &Network<f32>,
    samples: &[SamplePair],
    spacing: PixelSpacing,
    hd_percentile: f64,
) -> Result<(Vec<MetricReport>, Vec<MetricRow>)> {
    let images: Vec<&RasterImage> = samples.iter().map(|s| &s.image).collect();
    let preds = predict(net, &images, EVAL_BATCH)?;
    let mut reports = Vec::with_capacity(samples.len());
    let mut rows = Vec::new();
    for (p, s) in preds.iter().zip(samples) {
        let r = MetricReport::for_sample(p, &s.label, hd_percentile, spacing)?;
        rows.extend(MetricRow::from_report(&s.sample_id, &s.domain_tag, &r));
        reports.push(r);
    }
    Ok((reports, rows))
}

/// Evaluates one checkpoint on in-memory samples. No teacher is loaded.
pub fn evaluate_samples(
    checkpoint: &Path,
    samples: &[SamplePair],
    spacing: PixelSpacing,
    hd_percentile: f64,
) -> Result<Evaluation> {
    let first = samples
        .first()
        .ok_or_else(|| Error::validation("cannot evaluate on an empty dataset"))?;
    let before = teacher_forwards();
    let (net, meta) = load_checkpoint(
        checkpoint,
        Expectation {
            num_classes: Some(first.label.num_classes()),
            in_channels: Some(first.image.channels()),
        },
    )?;
    let (reports, rows) = evaluate_network(&net, samples, spacing, hd_percentile)?;
    let report = aggregate(&reports, Aggregation::MeanOverSamples)?;
    let mut by_domain: BTreeMap<String, Vec<MetricReport>> = BTreeMap::new();
    for (r, s) in reports.into_iter().zip(samples) {
        by_domain.entry(s.domain_tag.clone()).or_default().push(r);
    }
    let per_domain = by_domain
        .into_iter()
        .map(|(d, rs)| Ok((d, aggregate(&rs, Aggregation::MeanOverSamples)?)))
        .collect::<Result<_>>()?;
    Ok(Evaluation {
        role: meta.role,
        report,
        per_domain,
        rows,
        teacher_forwards: teacher_forwards() - before,
    })
}

/// Evaluates `checkpoint` on every sample of `manifest`.
pub fn evaluate(checkpoint: &Path, manifest: &DatasetManifest, hd_percentile: f64) -> Result<Evaluation> {
    let samples = Dataset::new(manifest.clone())?.load_all()?;
    evaluate_samples(checkpoint, &samples, manifest.pixel_spacing, hd_percentile)
}
