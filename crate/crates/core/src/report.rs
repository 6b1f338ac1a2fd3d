//! Report artifacts assembled from run directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{aggregate, read_rows, Aggregation, MetricReport, MetricRow};
use crate::pipeline::{
    plot_alpha, plot_distribution, read_csv, AblationRow, RepeatRow, SweepRow, ABLATION_CSV, ALPHA_SWEEP_CSV,
    REPEAT_CSV,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    SummaryCsv,
    AlphaPlot,
    DistributionPlot,
    Table4Csv,
}

impl ReportKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "summary-csv" => Some(Self::SummaryCsv),
            "alpha-plot" => Some(Self::AlphaPlot),
            "distribution-plot" => Some(Self::DistributionPlot),
            "table4-csv" => Some(Self::Table4Csv),
            _ => None,
        }
    }

    pub fn output_name(self) -> &'static str {
        match self {
            Self::SummaryCsv => "summary.csv",
            Self::AlphaPlot => "alpha_plot.png",
            Self::DistributionPlot => "dice_distribution.png",
            Self::Table4Csv => "table4.csv",
        }
    }
}

/// Per-sample metric files (`metrics/eval*.csv`) of a run directory, sorted.
pub fn eval_files(run_dir: &Path) -> Vec<PathBuf> {
    let Ok(entries) = std::fs::read_dir(run_dir.join("metrics")) else {
        return Vec::new();
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.starts_with("eval") && name.ends_with(".csv")
        })
        .collect();
    files.sort();
    files
}

/// Aggregate of one domain within one per-sample metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub source: String,
    pub domain: String,
    pub samples: usize,
    pub mean_dice: Option<f64>,
    pub mean_iou: Option<f64>,
    pub mean_hd: Option<f64>,
    pub hd_percentile: f64,
}

/// Groups per-sample rows into reports per domain, keeping first-seen order of samples.
pub fn reports_by_domain(rows: &[MetricRow]) -> Result<BTreeMap<String, MetricReport>> {
    let num_classes = rows.iter().map(|r| r.class).max().unwrap_or(0) + 1;
    let mut samples: BTreeMap<String, Vec<(String, Vec<&MetricRow>)>> = BTreeMap::new();
    for r in rows {
        let list = samples.entry(r.domain.clone()).or_default();
        match list.iter_mut().find(|(id, _)| *id == r.sample_id) {
            Some((_, v)) => v.push(r),
            None => list.push((r.sample_id.clone(), vec![r])),
        }
    }
    let mut out = BTreeMap::new();
    for (domain, list) in samples {
        let reports = list
            .iter()
            .map(|(_, rs)| MetricRow::to_report(rs, num_classes))
            .collect::<Result<Vec<_>>>()?;
        out.insert(domain, aggregate(&reports, Aggregation::MeanOverSamples)?);
    }
    Ok(out)
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

pub fn summarize_runs(run_dirs: &[PathBuf]) -> Result<Vec<SummaryRow>> {
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for dir in run_dirs {
        let files = eval_files(dir);
        if files.is_empty() {
            missing.push(dir.join("metrics/eval*.csv").display().to_string());
            continue;
        }
        for f in files {
            let rows = read_rows(&f)?;
            for (domain, rep) in reports_by_domain(&rows)? {
                out.push(SummaryRow {
                    run: run_name(dir),
                    source: f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                    domain,
                    samples: rep.sample_count,
                    mean_dice: rep.mean_dice,
                    mean_iou: rep.mean_iou,
                    mean_hd: rep.mean_hd,
                    hd_percentile: rep.hd_percentile,
                });
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    Ok(out)
}

/// One row of a teacher-input comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table4Row {
    pub run: String,
    pub teacher_input: String,
    pub intra_dice: f64,
    pub intra_hd: Option<f64>,
    pub cross_dice: f64,
    pub cross_hd: Option<f64>,
}

fn table_label(method: &str) -> &str {
    match method {
        "baseline" => "none (baseline)",
        "original" => "original image",
        "label_map" => "label map",
        "classwise_mean" => "class-wise mean",
        other => other,
    }
}

fn collect<R: for<'de> Deserialize<'de>>(run_dirs: &[PathBuf], file: &str) -> Result<Vec<(String, Vec<R>)>> {
    let missing: Vec<String> = run_dirs
        .iter()
        .map(|d| d.join(file))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    run_dirs
        .iter()
        .map(|d| Ok((run_name(d), read_csv(&d.join(file))?)))
        .collect()
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Builds the `kind` artifact from `run_dirs` into `out_dir` and returns its path.
pub fn emit_report(run_dirs: &[PathBuf], kind: ReportKind, out_dir: &Path) -> Result<PathBuf> {
    if run_dirs.is_empty() {
        return Err(Error::validation("report needs at least one run directory"));
    }
    let out = out_dir.join(kind.output_name());
    match kind {
        ReportKind::SummaryCsv => write_csv(&out, &summarize_runs(run_dirs)?)?,
        ReportKind::AlphaPlot => {
            let mut rows: Vec<SweepRow> = collect(run_dirs, ALPHA_SWEEP_CSV)?.into_iter().flat_map(|(_, r)| r).collect();
            rows.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
            plot_alpha(&rows, &out)?;
        }
        ReportKind::DistributionPlot => {
            let rows: Vec<RepeatRow> = collect(run_dirs, REPEAT_CSV)?.into_iter().flat_map(|(_, r)| r).collect();
            plot_distribution(&rows, &out)?;
        }
        ReportKind::Table4Csv => {
            let mut table = Vec::new();
            for (run, rows) in collect::<AblationRow>(run_dirs, ABLATION_CSV)? {
                for r in rows {
                    table.push(Table4Row {
                        run: run.clone(),
                        teacher_input: table_label(&r.method).to_string(),
                        intra_dice: r.intra_dice,
                        intra_hd: r.intra_hd,
                        cross_dice: r.cross_dice,
                        cross_hd: r.cross_hd,
                    });
                }
            }
            write_csv(&out, &table)?;
        }
    }
    Ok(out)
}
