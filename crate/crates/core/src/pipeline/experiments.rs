//! Alpha sweep, repeat study and teacher-input ablation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{TeacherInput, TrainConfig};
use super::eval::evaluate_samples;
use super::train::{train_baseline, train_student, train_teacher, RunRecord, TrainData};
use crate::data::{Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::image::{PixelSpacing, SamplePair};
use crate::plot;
use crate::seed::{derive_seed, Stream};

pub const ALPHA_SWEEP_CSV: &str = "metrics/alpha_sweep.csv";
pub const REPEAT_CSV: &str = "metrics/repeat_study.csv";
pub const REPEAT_SUMMARY_CSV: &str = "metrics/repeat_summary.csv";
pub const ABLATION_CSV: &str = "metrics/teacher_input_ablation.csv";

/// Training data plus the intra- and cross-domain test sets.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: TrainData,
    pub intra_test: Vec<SamplePair>,
    pub cross_test: Vec<SamplePair>,
    pub spacing: PixelSpacing,
}

impl ExperimentData {
    pub fn from_manifests(
        train: &DatasetManifest,
        val: &DatasetManifest,
        intra_test: &DatasetManifest,
        cross_test: &DatasetManifest,
    ) -> Result<Self> {
        let intra = Dataset::new(intra_test.clone())?.load_all()?;
        let cross = Dataset::new(cross_test.clone())?.load_all()?;
        if intra.is_empty() || cross.is_empty() {
            return Err(Error::validation("intra and cross test sets must be non-empty"));
        }
        Ok(Self {
            train: TrainData::from_manifests(train, val)?,
            intra_test: intra,
            cross_test: cross,
            spacing: intra_test.pixel_spacing,
        })
    }
}

/// Intra and cross mean foreground metrics of one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainScores {
    pub intra_dice: f64,
    pub intra_iou: f64,
    pub intra_hd: Option<f64>,
    pub cross_dice: f64,
    pub cross_iou: f64,
    pub cross_hd: Option<f64>,
}

macro_rules! with_scores {
    ($row:ident) => {
        impl $row {
            pub fn scores(&self) -> DomainScores {
                DomainScores {
                    intra_dice: self.intra_dice,
                    intra_iou: self.intra_iou,
                    intra_hd: self.intra_hd,
                    cross_dice: self.cross_dice,
                    cross_iou: self.cross_iou,
                    cross_hd: self.cross_hd,
                }
            }
        }
    };
}

fn score(checkpoint: &Path, data: &ExperimentData, hd_percentile: f64) -> Result<DomainScores> {
    let intra = evaluate_samples(checkpoint, &data.intra_test, data.spacing, hd_percentile)?.report;
    let cross = evaluate_samples(checkpoint, &data.cross_test, data.spacing, hd_percentile)?.report;
    let need = |v: Option<f64>, what: &str| v.ok_or_else(|| Error::validation(format!("{what} undefined")));
    Ok(DomainScores {
        intra_dice: need(intra.mean_dice, "intra Dice")?,
        intra_iou: need(intra.mean_iou, "intra IoU")?,
        intra_hd: intra.mean_hd,
        cross_dice: need(cross.mean_dice, "cross Dice")?,
        cross_iou: need(cross.mean_iou, "cross IoU")?,
        cross_hd: cross.mean_hd,
    })
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn check_experiment(data: &ExperimentData) -> Result<()> {
    if data.intra_test.is_empty() || data.cross_test.is_empty() {
        return Err(Error::validation("intra and cross test sets must be non-empty"));
    }
    Ok(())
}

fn write_config(dir: &Path, config: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_json() + "\n").map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub seed: u64,
    pub intra_dice: f64,
    pub intra_iou: f64,
    pub intra_hd: Option<f64>,
    pub cross_dice: f64,
    pub cross_iou: f64,
    pub cross_hd: Option<f64>,
}

with_scores!(SweepRow);

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub teacher: RunRecord,
    pub rows: Vec<SweepRow>,
}

/// Plots mean foreground Dice against alpha for both domains.
pub fn plot_alpha(rows: &[SweepRow], path: &Path) -> Result<()> {
    let intra = rows.iter().map(|r| (r.alpha, r.intra_dice)).collect();
    let cross = rows.iter().map(|r| (r.alpha, r.cross_dice)).collect();
    plot::line_plot(
        path,
        "Mean foreground Dice vs alpha",
        "alpha",
        "mean foreground Dice",
        &[("intra".to_string(), intra), ("cross".to_string(), cross)],
    )
}

/// One student per alpha against a single shared teacher.
pub fn alpha_sweep(data: &ExperimentData, alphas: &[f64], base: &TrainConfig, out_dir: &Path) -> Result<SweepReport> {
    if alphas.is_empty() {
        return Err(Error::validation("alpha list must be non-empty"));
    }
    if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::validation(format!("alpha must be non-negative, got {a}")));
    }
    base.validate()?;
    check_experiment(data)?;
    write_config(out_dir, base)?;
    let teacher = train_teacher(&data.train, base, &out_dir.join("teacher"))?;
    let mut rows = Vec::with_capacity(alphas.len());
    for (i, &alpha) in alphas.iter().enumerate() {
        let cfg = TrainConfig { alpha, ..base.clone() };
        let run = train_student(&data.train, &teacher.checkpoint, &cfg, &out_dir.join(format!("alpha_{i:02}")))?;
        let sc = score(&run.checkpoint, data, cfg.hd_percentile)?;
        rows.push(SweepRow {
            alpha,
            seed: cfg.seed,
            intra_dice: sc.intra_dice,
            intra_iou: sc.intra_iou,
            intra_hd: sc.intra_hd,
            cross_dice: sc.cross_dice,
            cross_iou: sc.cross_iou,
            cross_hd: sc.cross_hd,
        });
    }
    write_csv(&out_dir.join(ALPHA_SWEEP_CSV), &rows)?;
    plot_alpha(&rows, &out_dir.join("plots/alpha_sweep.png"))?;
    Ok(SweepReport { teacher, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Baseline,
    Sikd,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Sikd => "sikd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatRow {
    pub run: usize,
    pub seed: u64,
    pub arm: Arm,
    pub intra_dice: f64,
    pub intra_iou: f64,
    pub intra_hd: Option<f64>,
    pub cross_dice: f64,
    pub cross_iou: f64,
    pub cross_hd: Option<f64>,
}

with_scores!(RepeatRow);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub arm: Arm,
    pub domain: String,
    pub runs: usize,
    pub mean_dice: f64,
    pub std_dice: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatReport {
    pub rows: Vec<RepeatRow>,
    pub summary: Vec<SummaryRow>,
    /// Baseline and student runs; teachers are not counted.
    pub training_runs: usize,
}

impl RepeatReport {
    pub fn summary_for(&self, arm: Arm, domain: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.arm == arm && s.domain == domain)
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(rows: &[RepeatRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for arm in [Arm::Baseline, Arm::Sikd] {
        for domain in ["intra", "cross"] {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.arm == arm)
                .map(|r| if domain == "intra" { r.intra_dice } else { r.cross_dice })
                .collect();
            if vals.is_empty() {
                continue;
            }
            let (mean_dice, std_dice) = mean_std(&vals);
            out.push(SummaryRow {
                arm,
                domain: domain.to_string(),
                runs: vals.len(),
                mean_dice,
                std_dice,
            });
        }
    }
    out
}

/// Histogram of per-run cross-domain Dice for both arms.
pub fn plot_distribution(rows: &[RepeatRow], path: &Path) -> Result<()> {
    let series: Vec<(String, Vec<f64>)> = [Arm::Baseline, Arm::Sikd]
        .iter()
        .map(|&arm| {
            let v = rows.iter().filter(|r| r.arm == arm).map(|r| r.cross_dice).collect();
            (arm.name().to_string(), v)
        })
        .collect();
    plot::histogram_plot(path, "Cross-domain Dice over repeated runs", "mean foreground Dice", &series, 10)
}

/// Seed of run `index` in a repeat study rooted at `root`.
pub fn repeat_seed(root: u64, index: usize) -> u64 {
    derive_seed(root, Stream::Repeat, index as u64)
}

/// Trains baseline and SIKD `n_runs` times with distinct seeds; each seed
/// gets its own teacher.
pub fn repeat_study(n_runs: usize, base: &TrainConfig, data: &ExperimentData, out_dir: &Path) -> Result<RepeatReport> {
    if n_runs < 2 {
        return Err(Error::validation(format!("n_runs must be at least 2, got {n_runs}")));
    }
    base.validate()?;
    check_experiment(data)?;
    write_config(out_dir, base)?;
    let mut rows = Vec::with_capacity(2 * n_runs);
    let mut training_runs = 0;
    for run in 0..n_runs {
        let cfg = base.with_seed(repeat_seed(base.seed, run));
        let dir = out_dir.join(format!("run_{run:02}"));
        let teacher = train_teacher(&data.train, &cfg, &dir.join("teacher"))?;
        let baseline = train_baseline(&data.train, &cfg, &dir.join("baseline"))?;
        let student = train_student(&data.train, &teacher.checkpoint, &cfg, &dir.join("student"))?;
        training_runs += 2;
        for (arm, rec) in [(Arm::Baseline, &baseline), (Arm::Sikd, &student)] {
            let sc = score(&rec.checkpoint, data, cfg.hd_percentile)?;
            rows.push(RepeatRow {
                run,
                seed: cfg.seed,
                arm,
                intra_dice: sc.intra_dice,
                intra_iou: sc.intra_iou,
                intra_hd: sc.intra_hd,
                cross_dice: sc.cross_dice,
                cross_iou: sc.cross_iou,
                cross_hd: sc.cross_hd,
            });
        }
    }
    let summary = summarize(&rows);
    write_csv(&out_dir.join(REPEAT_CSV), &rows)?;
    write_csv(&out_dir.join(REPEAT_SUMMARY_CSV), &summary)?;
    plot_distribution(&rows, &out_dir.join("plots/dice_distribution.png"))?;
    Ok(RepeatReport {
        rows,
        summary,
        training_runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `baseline` or a teacher input variant name.
    pub method: String,
    pub seed: u64,
    pub epochs: usize,
    pub alpha: f64,
    pub intra_dice: f64,
    pub intra_iou: f64,
    pub intra_hd: Option<f64>,
    pub cross_dice: f64,
    pub cross_iou: f64,
    pub cross_hd: Option<f64>,
}

with_scores!(AblationRow);

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, method: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Baseline plus one teacher/student pair per teacher input variant.
pub fn teacher_input_ablation(data: &ExperimentData, base: &TrainConfig, out_dir: &Path) -> Result<AblationReport> {
    base.validate()?;
    check_experiment(data)?;
    write_config(out_dir, base)?;
    let mut rows = Vec::with_capacity(4);
    let baseline = train_baseline(&data.train, base, &out_dir.join("baseline"))?;
    let mut push = |method: &str, ckpt: &PathBuf| -> Result<()> {
        let sc = score(ckpt, data, base.hd_percentile)?;
        rows.push(AblationRow {
            method: method.to_string(),
            seed: base.seed,
            epochs: base.epochs,
            alpha: base.alpha,
            intra_dice: sc.intra_dice,
            intra_iou: sc.intra_iou,
            intra_hd: sc.intra_hd,
            cross_dice: sc.cross_dice,
            cross_iou: sc.cross_iou,
            cross_hd: sc.cross_hd,
        });
        Ok(())
    };
    push("baseline", &baseline.checkpoint)?;
    for variant in TeacherInput::ALL {
        let cfg = TrainConfig {
            teacher_input: variant,
            ..base.clone()
        };
        let dir = out_dir.join(variant.name());
        let teacher = train_teacher(&data.train, &cfg, &dir.join("teacher"))?;
        let student = train_student(&data.train, &teacher.checkpoint, &cfg, &dir.join("student"))?;
        push(variant.name(), &student.checkpoint)?;
    }
    write_csv(&out_dir.join(ABLATION_CSV), &rows)?;
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-12);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }

    #[test]
    fn repeat_seeds_are_distinct() {
        let seeds: std::collections::HashSet<_> = (0..50).map(|i| repeat_seed(7, i)).collect();
        assert_eq!(seeds.len(), 50);
    }

    #[test]
    fn csv_round_trip_with_optional_hd() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![RepeatRow {
            run: 0,
            seed: 3,
            arm: Arm::Sikd,
            intra_dice: 0.9,
            intra_iou: 0.8,
            intra_hd: None,
            cross_dice: 0.7,
            cross_iou: 0.6,
            cross_hd: Some(2.5),
        }];
        let p = dir.path().join("m/r.csv");
        write_csv(&p, &rows).unwrap();
        let back: Vec<RepeatRow> = read_csv(&p).unwrap();
        assert_eq!(back, rows);
    }
}
