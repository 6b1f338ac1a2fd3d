//! Overlap and boundary-distance metrics for label maps.
//!
//! Empty-mask conventions: when both masks are empty Dice and IoU are 1.0,
//! when exactly one is empty they are 0.0, and the Hausdorff distance is
//! undefined whenever either mask is empty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{LabelMap, PixelSpacing};
use crate::tensor::{Real, Tensor};

fn check_dims(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::ShapeMismatch {
            context: "prediction vs ground truth".into(),
            expected: format!("{}x{}", gt.height(), gt.width()),
            actual: format!("{}x{}", pred.height(), pred.width()),
        });
    }
    Ok(())
}

/// `(|A ∩ B|, |A|, |B|)` for the masks of class `k`.
fn overlap(pred: &LabelMap, gt: &LabelMap, k: u8) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut a = 0;
    let mut b = 0;
    for (&p, &g) in pred.ids().iter().zip(gt.ids()) {
        let (in_a, in_b) = (p == k, g == k);
        a += in_a as usize;
        b += in_b as usize;
        inter += (in_a && in_b) as usize;
    }
    (inter, a, b)
}

/// `2|A ∩ B| / (|A| + |B|)`.
pub fn dice(pred: &LabelMap, gt: &LabelMap, k: u8) -> Result<f64> {
    check_dims(pred, gt)?;
    let (inter, a, b) = overlap(pred, gt, k);
    Ok(if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    })
}

/// `|A ∩ B| / |A ∪ B|`.
pub fn iou(pred: &LabelMap, gt: &LabelMap, k: u8) -> Result<f64> {
    check_dims(pred, gt)?;
    let (inter, a, b) = overlap(pred, gt, k);
    let union = a + b - inter;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Mask pixels with at least one 4-neighbour outside the mask. Pixels on
/// the image border count as boundary (outside the image is not mask).
pub fn boundary(mask: &[bool], height: usize, width: usize) -> Vec<(usize, usize)> {
    let at = |y: usize, x: usize| mask[y * width + x];
    let mut out = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if !at(y, x) {
                continue;
            }
            let interior = y > 0
                && x > 0
                && y + 1 < height
                && x + 1 < width
                && at(y - 1, x)
                && at(y + 1, x)
                && at(y, x - 1)
                && at(y, x + 1);
            if !interior {
                out.push((y, x));
            }
        }
    }
    out
}

/// One-dimensional squared distance transform (lower envelope of parabolas)
/// with sample spacing `s`. Infinite entries of `f` are not sites.
fn squared_distance_1d(f: &[f64], s: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let s2 = s * s;
    let mut k: isize = -1;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        let cq = f[q] + s2 * (q * q) as f64;
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let vk = v[k as usize];
            let cv = f[vk] + s2 * (vk * vk) as f64;
            let cross = (cq - cv) / (2.0 * s2 * (q - vk) as f64);
            if cross <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = cross;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut j = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while z[j + 1] < p as f64 {
            j += 1;
        }
        let d = s * (p as f64 - v[j] as f64);
        *o = d * d + f[v[j]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest site.
fn squared_distance_map(sites: &[(usize, usize)], height: usize, width: usize, spacing: PixelSpacing) -> Vec<f64> {
    let [sy, sx] = spacing.0;
    let mut grid = vec![f64::INFINITY; height * width];
    for &(y, x) in sites {
        grid[y * width + x] = 0.0;
    }
    let n = height.max(width);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut col = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = grid[y * width + x];
        }
        squared_distance_1d(&col, sy, &mut col_out, &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; width];
    for y in 0..height {
        let row = &grid[y * width..(y + 1) * width];
        squared_distance_1d(row, sx, &mut row_out, &mut v, &mut z);
        grid[y * width..(y + 1) * width].copy_from_slice(&row_out);
    }
    grid
}

/// Linear-interpolated percentile of sorted values, `p` in `(0, 100]`.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Percentile Hausdorff distance between the class-`k` boundaries, in
/// physical units. `percentile = 100` is the classical Hausdorff distance.
///
/// Directed boundary-to-boundary distances of both directions are pooled
/// before taking the percentile. Returns `None` if either mask is empty.
pub fn hausdorff(pred: &LabelMap, gt: &LabelMap, k: u8, percentile: f64, spacing: PixelSpacing) -> Result<Option<f64>> {
    check_dims(pred, gt)?;
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::validation(format!(
            "percentile must be in (0, 100], got {percentile}"
        )));
    }
    if spacing.0.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::validation(format!("invalid pixel spacing {:?}", spacing.0)));
    }
    let (h, w) = (gt.height(), gt.width());
    let ba = boundary(&pred.mask(k), h, w);
    let bb = boundary(&gt.mask(k), h, w);
    if ba.is_empty() || bb.is_empty() {
        return Ok(None);
    }
    let to_b = squared_distance_map(&bb, h, w, spacing);
    let to_a = squared_distance_map(&ba, h, w, spacing);
    let mut d: Vec<f64> = ba
        .iter()
        .map(|&(y, x)| to_b[y * w + x].sqrt())
        .chain(bb.iter().map(|&(y, x)| to_a[y * w + x].sqrt()))
        .collect();
    d.sort_by(f64::total_cmp);
    Ok(Some(percentile_sorted(&d, percentile)))
}

/// Per-pixel argmax over classes; ties go to the lowest class id.
pub fn predict_labels<T: Real>(logits: &Tensor<T>) -> Result<Vec<LabelMap>> {
    let [n, k, h, w] = logits.shape();
    let plane = h * w;
    (0..n)
        .map(|i| {
            let z = logits.item(i);
            let ids = (0..plane)
                .map(|px| {
                    let mut best = 0;
                    for c in 1..k {
                        if z[c * plane + px] > z[best * plane + px] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap::new(h, w, k, ids)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    MeanOverSamples,
}

/// Metrics of one foreground class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub dice: Option<f64>,
    pub iou: Option<f64>,
    pub hd: Option<f64>,
    /// Samples whose value was undefined and excluded from the mean.
    pub dice_undefined: usize,
    pub iou_undefined: usize,
    pub hd_undefined: usize,
}

/// Per-class metrics for foreground classes `1..K` and their averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub num_classes: usize,
    pub mode: Aggregation,
    pub sample_count: usize,
    pub hd_percentile: f64,
    pub classes: Vec<ClassMetrics>,
    pub mean_dice: Option<f64>,
    pub mean_iou: Option<f64>,
    pub mean_hd: Option<f64>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    let mut undefined = 0;
    for v in values {
        match v {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => undefined += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), undefined)
}

impl MetricReport {
    fn with_classes(num_classes: usize, sample_count: usize, hd_percentile: f64, classes: Vec<ClassMetrics>) -> Self {
        let mean_dice = mean_defined(classes.iter().map(|c| c.dice)).0;
        let mean_iou = mean_defined(classes.iter().map(|c| c.iou)).0;
        let mean_hd = mean_defined(classes.iter().map(|c| c.hd)).0;
        Self {
            num_classes,
            mode: Aggregation::MeanOverSamples,
            sample_count,
            hd_percentile,
            classes,
            mean_dice,
            mean_iou,
            mean_hd,
        }
    }

    /// Metrics of a single prediction.
    pub fn for_sample(pred: &LabelMap, gt: &LabelMap, hd_percentile: f64, spacing: PixelSpacing) -> Result<Self> {
        check_dims(pred, gt)?;
        let k = gt.num_classes();
        let mut classes = Vec::with_capacity(k.saturating_sub(1));
        for class in 1..k {
            let id = class as u8;
            let hd = hausdorff(pred, gt, id, hd_percentile, spacing)?;
            classes.push(ClassMetrics {
                class,
                dice: Some(dice(pred, gt, id)?),
                iou: Some(iou(pred, gt, id)?),
                hd,
                dice_undefined: 0,
                iou_undefined: 0,
                hd_undefined: hd.is_none() as usize,
            });
        }
        Ok(Self::with_classes(k, 1, hd_percentile, classes))
    }

    pub fn class(&self, k: usize) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.class == k)
    }
}

/// Sample-weighted mean of reports; undefined entries are skipped and counted.
pub fn aggregate(reports: &[MetricReport], mode: Aggregation) -> Result<MetricReport> {
    let Aggregation::MeanOverSamples = mode;
    let first = reports
        .first()
        .ok_or_else(|| Error::validation("cannot aggregate an empty list of reports"))?;
    for r in reports {
        if r.num_classes != first.num_classes || r.classes.len() != first.classes.len() {
            return Err(Error::validation(format!(
                "inconsistent class counts: {} vs {}",
                first.num_classes, r.num_classes
            )));
        }
        if r.hd_percentile != first.hd_percentile {
            return Err(Error::validation(format!(
                "inconsistent HD percentiles: {} vs {}",
                first.hd_percentile, r.hd_percentile
            )));
        }
    }
    let sample_count = reports.iter().map(|r| r.sample_count).sum();
    let classes = (0..first.classes.len())
        .map(|i| {
            let entries: Vec<&ClassMetrics> = reports.iter().map(|r| &r.classes[i]).collect();
            let combine = |get: &dyn Fn(&ClassMetrics) -> (Option<f64>, usize)| {
                let mut sum = 0.0;
                let mut weight = 0usize;
                let mut undefined = 0;
                for (e, r) in entries.iter().zip(reports) {
                    let (v, und) = get(e);
                    undefined += und;
                    if let Some(v) = v {
                        let n = r.sample_count - und;
                        sum += v * n as f64;
                        weight += n;
                    }
                }
                ((weight > 0).then(|| sum / weight as f64), undefined)
            };
            let (dice, dice_undefined) = combine(&|e| (e.dice, e.dice_undefined));
            let (iou, iou_undefined) = combine(&|e| (e.iou, e.iou_undefined));
            let (hd, hd_undefined) = combine(&|e| (e.hd, e.hd_undefined));
            ClassMetrics {
                class: first.classes[i].class,
                dice,
                iou,
                hd,
                dice_undefined,
                iou_undefined,
                hd_undefined,
            }
        })
        .collect();
    Ok(MetricReport::with_classes(
        first.num_classes,
        sample_count,
        first.hd_percentile,
        classes,
    ))
}

/// One CSV row: a sample's metrics for one foreground class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sample_id: String,
    pub domain: String,
    pub class: usize,
    pub dice: Option<f64>,
    pub iou: Option<f64>,
    pub hd: Option<f64>,
    pub hd_percentile: f64,
    pub dice_defined: bool,
    pub iou_defined: bool,
    pub hd_defined: bool,
}

impl MetricRow {
    pub fn from_report(sample_id: &str, domain: &str, report: &MetricReport) -> Vec<Self> {
        report
            .classes
            .iter()
            .map(|c| MetricRow {
                sample_id: sample_id.to_string(),
                domain: domain.to_string(),
                class: c.class,
                dice: c.dice,
                iou: c.iou,
                hd: c.hd,
                hd_percentile: report.hd_percentile,
                dice_defined: c.dice.is_some(),
                iou_defined: c.iou.is_some(),
                hd_defined: c.hd.is_some(),
            })
            .collect()
    }

    /// Rebuilds a single-sample report from its rows.
    pub fn to_report(rows: &[&MetricRow], num_classes: usize) -> Result<MetricReport> {
        let first = rows.first().ok_or_else(|| Error::validation("no metric rows"))?;
        let classes = rows
            .iter()
            .map(|r| ClassMetrics {
                class: r.class,
                dice: r.dice,
                iou: r.iou,
                hd: r.hd,
                dice_undefined: r.dice.is_none() as usize,
                iou_undefined: r.iou.is_none() as usize,
                hd_undefined: r.hd.is_none() as usize,
            })
            .collect();
        Ok(MetricReport::with_classes(num_classes, 1, first.hd_percentile, classes))
    }
}

pub fn write_rows(path: &std::path::Path, rows: &[MetricRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_rows(path: &std::path::Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?;
    Ok(rows)
}
