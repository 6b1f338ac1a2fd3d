//! Teacher, student and baseline training.

use std::cell::Cell;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{TeacherInput, TrainConfig};
use crate::average::classwise_average;
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, Expectation, Role};
use crate::data::{Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::image::{LabelMap, RasterImage, SamplePair};
use crate::losses::objective;
use crate::metrics::{dice, predict_labels};
use crate::model::{images_to_tensor, Network, NetworkOutput};
use crate::optim::Optimizer;
use crate::seed::{rng_for, Stream};
use crate::tensor::{Real, Tensor};

thread_local! {
    static TEACHER_FORWARDS: Cell<u64> = const { Cell::new(0) };
}

/// Teacher forward passes run on the current thread so far.
pub fn teacher_forwards() -> u64 {
    TEACHER_FORWARDS.with(Cell::get)
}

fn teacher_forward(teacher: &Network<f32>, x: &Tensor<f32>) -> Result<NetworkOutput<f32>> {
    TEACHER_FORWARDS.with(|c| c.set(c.get() + 1));
    forward_padded(teacher, x)
}

fn mirror(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Reflect-pads height and width at the bottom/right up to multiples of `m`.
pub fn pad_to_multiple<T: Real>(x: &Tensor<T>, m: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (hp, wp) == (h, w) {
        return x.clone();
    }
    let mut out = Tensor::zeros([n, c, hp, wp]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..hp {
            let sy = mirror(y, h);
            for xx in 0..wp {
                dst[(plane * hp + y) * wp + xx] = src[(plane * h + sy) * w + mirror(xx, w)];
            }
        }
    }
    out
}

/// Top-left `h x w` window of every plane.
pub fn crop<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, c, hp, wp] = x.shape();
    if (hp, wp) == (h, w) {
        return x.clone();
    }
    let mut data = Vec::with_capacity(n * c * h * w);
    for plane in 0..n * c {
        for y in 0..h {
            let start = (plane * hp + y) * wp;
            data.extend_from_slice(&x.data()[start..start + w]);
        }
    }
    Tensor::from_vec([n, c, h, w], data).expect("crop shape")
}

/// Adjoint of [`crop`]: embeds `g` into zeros of spatial size `hp x wp`.
fn uncrop<T: Real>(g: &Tensor<T>, hp: usize, wp: usize) -> Tensor<T> {
    let [n, c, h, w] = g.shape();
    if (hp, wp) == (h, w) {
        return g.clone();
    }
    let mut out = Tensor::zeros([n, c, hp, wp]);
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..h {
            let s = (plane * h + y) * w;
            let d = (plane * hp + y) * wp;
            dst[d..d + w].copy_from_slice(&g.data()[s..s + w]);
        }
    }
    out
}

/// Inference on inputs of any size; outputs are cropped back to the input size.
pub fn forward_padded(net: &Network<f32>, x: &Tensor<f32>) -> Result<NetworkOutput<f32>> {
    let (h, w) = (x.height(), x.width());
    let out = net.forward(&pad_to_multiple(x, net.config().size_multiple()))?;
    Ok(NetworkOutput {
        logits: crop(&out.logits, h, w),
        penultimate: crop(&out.penultimate, h, w),
    })
}

/// Argmax label maps for `images`, evaluated in batches.
pub fn predict(net: &Network<f32>, images: &[&RasterImage], batch_size: usize) -> Result<Vec<LabelMap>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let x = images_to_tensor::<f32>(chunk)?;
        out.extend(predict_labels(&forward_padded(net, &x)?.logits)?);
    }
    Ok(out)
}

/// The image a teacher sees for one sample.
pub fn teacher_input(image: &RasterImage, label: &LabelMap, variant: TeacherInput) -> Result<RasterImage> {
    match variant {
        TeacherInput::Original => Ok(image.clone()),
        TeacherInput::ClasswiseMean => classwise_average(image, label),
        TeacherInput::LabelMap => {
            let scale = (label.num_classes() - 1) as f64;
            let plane: Vec<f64> = label.ids().iter().map(|&id| id as f64 / scale).collect();
            let values = plane.repeat(image.channels());
            RasterImage::new(image.height(), image.width(), image.channels(), values)
        }
    }
}

/// Replaces every image by its teacher input; labels and ids are kept.
pub fn prepare_teacher_inputs(samples: &[SamplePair], variant: TeacherInput) -> Result<Vec<SamplePair>> {
    samples
        .iter()
        .map(|s| {
            Ok(SamplePair {
                image: teacher_input(&s.image, &s.label, variant)?,
                ..s.clone()
            })
        })
        .collect()
}

/// Training and validation samples held in memory.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<SamplePair>,
    pub val: Vec<SamplePair>,
}

impl TrainData {
    pub fn new(train: Vec<SamplePair>, val: Vec<SamplePair>) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::validation("training and validation sets must be non-empty"));
        }
        Ok(Self { train, val })
    }

    pub fn from_manifests(train: &DatasetManifest, val: &DatasetManifest) -> Result<Self> {
        Self::new(
            Dataset::new(train.clone())?.load_all()?,
            Dataset::new(val.clone())?.load_all()?,
        )
    }

    fn check(&self, config: &TrainConfig) -> Result<()> {
        for s in self.train.iter().chain(&self.val) {
            if s.label.num_classes() != config.num_classes {
                return Err(Error::ConfigMismatch(format!(
                    "sample '{}' has {} classes, config expects {}",
                    s.sample_id,
                    s.label.num_classes(),
                    config.num_classes
                )));
            }
            if s.image.channels() != config.in_channels {
                return Err(Error::ConfigMismatch(format!(
                    "sample '{}' has {} channels, config expects {}",
                    s.sample_id,
                    s.image.channels(),
                    config.in_channels
                )));
            }
        }
        Ok(())
    }
}

/// Mean loss components and validation score of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub seg_ce: f64,
    pub seg_dice: Option<f64>,
    /// Present for students only.
    pub kd: Option<f64>,
    pub total: f64,
    pub val_mean_dice: f64,
}

impl EpochRecord {
    pub fn seg(&self) -> f64 {
        self.seg_ce + self.seg_dice.unwrap_or(0.0)
    }
}

/// Outcome of one training run, saved as `record.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub role: Role,
    pub seed: u64,
    pub config_digest: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub checkpoint: PathBuf,
    pub teacher_checkpoint: Option<PathBuf>,
    pub param_count: usize,
    pub teacher_forwards: u64,
    pub wall_clock_secs: f64,
    /// Set when training stopped on a non-finite loss.
    pub diverged: Option<String>,
}

impl RunRecord {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoints/best.ckpt";

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_trace(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "seg_ce", "seg_dice", "kd", "total", "val_mean_dice"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for e in epochs {
        w.write_record([
            e.epoch.to_string(),
            e.seg_ce.to_string(),
            opt(e.seg_dice),
            opt(e.kd),
            e.total.to_string(),
            e.val_mean_dice.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean over samples and foreground classes of per-class Dice.
fn mean_foreground_dice(net: &Network<f32>, samples: &[SamplePair], batch_size: usize) -> Result<f64> {
    let images: Vec<&RasterImage> = samples.iter().map(|s| &s.image).collect();
    let preds = predict(net, &images, batch_size)?;
    let k = net.config().num_classes;
    let mut sum = 0.0;
    for (p, s) in preds.iter().zip(samples) {
        for class in 1..k {
            sum += dice(p, &s.label, class as u8)?;
        }
    }
    Ok(sum / (samples.len() * (k - 1)) as f64)
}

struct Distill<'a> {
    teacher: &'a Network<f32>,
    variant: TeacherInput,
}

struct Job<'a> {
    role: Role,
    config: &'a TrainConfig,
    train: &'a [SamplePair],
    val: &'a [SamplePair],
    distill: Option<Distill<'a>>,
    teacher_checkpoint: Option<PathBuf>,
    run_dir: &'a Path,
}

fn run(job: Job<'_>) -> Result<RunRecord> {
    let started = Instant::now();
    let forwards_before = teacher_forwards();
    let cfg = job.config;
    let mut net = Network::<f32>::new(&cfg.model_config(job.role))?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &net);
    let multiple = net.config().size_multiple();
    let ckpt_path = job.run_dir.join(CHECKPOINT_FILE);
    write_json(&job.run_dir.join("config.json"), cfg)?;

    let mut record = RunRecord {
        role: job.role,
        seed: cfg.seed,
        config_digest: cfg.digest(),
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_dice: f64::NEG_INFINITY,
        checkpoint: ckpt_path.clone(),
        teacher_checkpoint: job.teacher_checkpoint.clone(),
        param_count: net.param_count(),
        teacher_forwards: 0,
        wall_clock_secs: 0.0,
        diverged: None,
    };

    if let Some(d) = &job.distill {
        let probe = &job.train[0];
        let x = images_to_tensor::<f32>(&[&probe.image])?;
        let t_in = teacher_input(&probe.image, &probe.label, d.variant)?;
        let t = forward_padded(d.teacher, &images_to_tensor(&[&t_in])?)?;
        let s = forward_padded(&net, &x)?;
        if t.penultimate.shape() != s.penultimate.shape() {
            return Err(Error::ConfigMismatch(format!(
                "teacher penultimate features {:?} do not match student {:?}",
                t.penultimate.shape(),
                s.penultimate.shape()
            )));
        }
    }

    let n = job.train.len();
    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(cfg.seed, Stream::DataOrder, epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let flips: Vec<bool> = order.iter().map(|_| rng.gen_bool(0.5)).collect();

        let (mut ce_sum, mut dice_sum, mut kd_sum, mut total_sum) = (0.0, 0.0, 0.0, 0.0);
        for (b, (idx, flip)) in order.chunks(cfg.batch_size).zip(flips.chunks(cfg.batch_size)).enumerate() {
            let mut images = Vec::with_capacity(idx.len());
            let mut labels = Vec::with_capacity(idx.len());
            for (&i, &f) in idx.iter().zip(flip) {
                let s = &job.train[i];
                if cfg.horizontal_flip && f {
                    images.push(s.image.flip_horizontal());
                    labels.push(s.label.flip_horizontal());
                } else {
                    images.push(s.image.clone());
                    labels.push(s.label.clone());
                }
            }
            let image_refs: Vec<&RasterImage> = images.iter().collect();
            let label_refs: Vec<&LabelMap> = labels.iter().collect();
            let x = images_to_tensor::<f32>(&image_refs)?;
            let (h, w) = (x.height(), x.width());

            let teacher_features = match &job.distill {
                Some(d) => {
                    let t_inputs = images
                        .iter()
                        .zip(&labels)
                        .map(|(im, lb)| teacher_input(im, lb, d.variant))
                        .collect::<Result<Vec<_>>>()?;
                    let refs: Vec<&RasterImage> = t_inputs.iter().collect();
                    Some(teacher_forward(d.teacher, &images_to_tensor(&refs)?)?.penultimate)
                }
                None => None,
            };

            let xp = pad_to_multiple(&x, multiple);
            let (hp, wp) = (xp.height(), xp.width());
            let (out, cache) = net.forward_train(&xp)?;
            let logits = crop(&out.logits, h, w);
            let features = crop(&out.penultimate, h, w);
            let grads = objective(
                &logits,
                &label_refs,
                cfg.seg_loss,
                cfg.dice_smooth,
                teacher_features.as_ref().map(|t| (t, &features)),
                cfg.alpha,
            )?;
            if !grads.loss.scalar.is_finite() {
                let detail = format!("non-finite loss {:?}", grads.loss.components);
                record.diverged = Some(format!("epoch {} batch {}: {detail}", epoch + 1, b));
                record.wall_clock_secs = started.elapsed().as_secs_f64();
                record.teacher_forwards = teacher_forwards() - forwards_before;
                write_json(&job.run_dir.join("record.json"), &record)?;
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: b,
                    detail,
                });
            }
            net.zero_grad();
            let d_features = grads.d_features.as_ref().map(|g| uncrop(g, hp, wp));
            net.backward(cache, &uncrop(&grads.d_logits, hp, wp), d_features.as_ref());
            opt.step(&mut net);

            let bs = idx.len() as f64;
            let c = &grads.loss.components;
            ce_sum += bs * c["seg_ce"];
            dice_sum += bs * c.get("seg_dice").copied().unwrap_or(0.0);
            kd_sum += bs * c["kd"];
            total_sum += bs * grads.loss.scalar;
        }

        let val_dice = mean_foreground_dice(&net, job.val, cfg.batch_size)?;
        let nf = n as f64;
        record.epochs.push(EpochRecord {
            epoch: epoch + 1,
            seg_ce: ce_sum / nf,
            seg_dice: cfg.seg_loss.uses_dice().then_some(dice_sum / nf),
            kd: job.distill.is_some().then_some(kd_sum / nf),
            total: total_sum / nf,
            val_mean_dice: val_dice,
        });
        if val_dice > record.best_val_dice {
            record.best_val_dice = val_dice;
            record.best_epoch = epoch + 1;
            let meta = CheckpointMeta {
                model_config: net.config().clone(),
                role: job.role,
                train_config_digest: record.config_digest.clone(),
                epoch: epoch + 1,
                metrics: [("val_mean_dice".to_string(), val_dice)].into_iter().collect(),
            };
            save_checkpoint(&net, &meta, &ckpt_path)?;
        }
    }

    record.teacher_forwards = teacher_forwards() - forwards_before;
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    write_json(&job.run_dir.join("record.json"), &record)?;
    write_trace(&job.run_dir.join("metrics/train_trace.csv"), &record.epochs)?;
    Ok(record)
}

/// Trains a skip-free teacher on `config.teacher_input` images with the
/// segmentation loss only.
pub fn train_teacher(data: &TrainData, config: &TrainConfig, run_dir: &Path) -> Result<RunRecord> {
    config.validate()?;
    data.check(config)?;
    let train = prepare_teacher_inputs(&data.train, config.teacher_input)?;
    let val = prepare_teacher_inputs(&data.val, config.teacher_input)?;
    run(Job {
        role: Role::Teacher,
        config,
        train: &train,
        val: &val,
        distill: None,
        teacher_checkpoint: None,
        run_dir,
    })
}

/// Trains a student on original images against a frozen teacher's
/// penultimate features.
pub fn train_student(data: &TrainData, teacher_checkpoint: &Path, config: &TrainConfig, run_dir: &Path) -> Result<RunRecord> {
    config.validate()?;
    data.check(config)?;
    let (teacher, _) = load_checkpoint(
        teacher_checkpoint,
        Expectation {
            num_classes: Some(config.num_classes),
            in_channels: Some(config.in_channels),
        },
    )?;
    run(Job {
        role: Role::Student,
        config,
        train: &data.train,
        val: &data.val,
        distill: Some(Distill {
            teacher: &teacher,
            variant: config.teacher_input,
        }),
        teacher_checkpoint: Some(teacher_checkpoint.to_path_buf()),
        run_dir,
    })
}

/// Student architecture trained with the segmentation loss alone.
pub fn train_baseline(data: &TrainData, config: &TrainConfig, run_dir: &Path) -> Result<RunRecord> {
    config.validate()?;
    data.check(config)?;
    run(Job {
        role: Role::Baseline,
        config,
        train: &data.train,
        val: &data.val,
        distill: None,
        teacher_checkpoint: None,
        run_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_crop_round_trip() {
        let x = Tensor::<f64>::from_vec([1, 2, 3, 5], (0..30).map(|v| v as f64).collect()).unwrap();
        let p = pad_to_multiple(&x, 4);
        assert_eq!(p.shape(), [1, 2, 4, 8]);
        // Row 3 mirrors row 1; column 5 mirrors column 3.
        assert_eq!(p.get(0, 0, 3, 0), x.get(0, 0, 1, 0));
        assert_eq!(p.get(0, 1, 0, 5), x.get(0, 1, 0, 3));
        assert_eq!(p.get(0, 0, 2, 7), x.get(0, 0, 2, 1));
        assert_eq!(crop(&p, 3, 5), x);
        let g = uncrop(&x, 4, 8);
        assert_eq!(crop(&g, 3, 5), x);
        assert_eq!(g.data().iter().sum::<f64>(), x.data().iter().sum::<f64>());
        assert_eq!(pad_to_multiple(&x.select(0), 1), x.select(0));
    }

    #[test]
    fn teacher_input_variants() {
        let img = RasterImage::from_rows(&[&[0.1, 0.3], &[0.9, 0.5]]).unwrap();
        let lab = LabelMap::from_rows(&[&[0, 0], &[2, 1]], 3).unwrap();
        assert_eq!(teacher_input(&img, &lab, TeacherInput::Original).unwrap(), img);
        let lm = teacher_input(&img, &lab, TeacherInput::LabelMap).unwrap();
        assert_eq!(lm.values(), &[0.0, 0.0, 1.0, 0.5]);
        let avg = teacher_input(&img, &lab, TeacherInput::ClasswiseMean).unwrap();
        assert!((avg.get(0, 0, 0) - 0.2).abs() < 1e-12);
        let rgb = RasterImage::filled(2, 2, 3, 0.4).unwrap();
        let lm = teacher_input(&rgb, &lab, TeacherInput::LabelMap).unwrap();
        assert_eq!(lm.channel(2), lm.channel(0));
    }
}
