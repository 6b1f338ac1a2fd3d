use std::path::Path;

use sikd_core::checkpoint::{load_checkpoint, Expectation, Role};
use sikd_core::data::{generate_corpus, shift_corpus, split, CorpusSpec, DomainShift};
use sikd_core::pipeline::{
    alpha_sweep, evaluate, repeat_study, teacher_input_ablation, train_baseline, train_student, train_teacher,
    Arm, ExperimentData, RunRecord, TrainConfig, TrainData,
};
use sikd_core::Error;

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        base_width: 4,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

fn experiment(root: &Path) -> ExperimentData {
    let spec = CorpusSpec::new(24, 16, 3, 11);
    let intra = generate_corpus(&spec, &root.join("intra")).unwrap();
    let src = generate_corpus(&CorpusSpec { num_samples: 6, seed: 12, ..spec }, &root.join("src")).unwrap();
    let shift = DomainShift {
        intensity_offset: 0.15,
        contrast_scale: 1.3,
        noise_amplitude_delta: 0.05,
        texture_frequency_scale: 1.0,
    };
    let cross = shift_corpus(&src, &shift, 13, &root.join("cross"), "cross").unwrap();
    let parts = split(&intra, (0.7, 0.1, 0.2), 0).unwrap();
    ExperimentData::from_manifests(&parts.train, &parts.val, &parts.test, &cross).unwrap()
}

#[test]
fn training_is_deterministic_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let data = experiment(dir.path()).train;
    let cfg = TrainConfig { epochs: 1, ..small_config() };
    let a = train_teacher(&data, &cfg, &dir.path().join("a")).unwrap();
    let b = train_teacher(&data, &cfg, &dir.path().join("b")).unwrap();
    assert_eq!(a.epochs.len(), 1);
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.role, Role::Teacher);
    assert!(a.epochs[0].kd.is_none());
    for f in ["config.json", "record.json", "metrics/train_trace.csv", "checkpoints/best.ckpt"] {
        assert!(dir.path().join("a").join(f).is_file(), "{f}");
    }
    assert_eq!(RunRecord::read(&dir.path().join("a/record.json")).unwrap(), a);
    let echoed: TrainConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/config.json")).unwrap()).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn student_keeps_teacher_frozen_and_matches_baseline_size() {
    let dir = tempfile::tempdir().unwrap();
    let data = experiment(dir.path()).train;
    let cfg = small_config();
    let teacher = train_teacher(&data, &cfg, &dir.path().join("teacher")).unwrap();
    let before = std::fs::read(&teacher.checkpoint).unwrap();
    let student = train_student(&data, &teacher.checkpoint, &cfg, &dir.path().join("student")).unwrap();
    let baseline = train_baseline(&data, &cfg, &dir.path().join("baseline")).unwrap();
    assert_eq!(before, std::fs::read(&teacher.checkpoint).unwrap());
    assert!(student.teacher_forwards > 0);
    assert_eq!(baseline.teacher_forwards, 0);
    assert_eq!(student.param_count, baseline.param_count);
    assert!(student.epochs.iter().all(|e| e.kd.is_some_and(f64::is_finite)));
    assert!(baseline.epochs.iter().all(|e| e.total.is_finite() && e.kd.is_none()));
    assert_eq!(student.teacher_checkpoint.as_deref(), Some(teacher.checkpoint.as_path()));
}

#[test]
fn incompatible_teacher_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = experiment(dir.path()).train;
    let teacher = train_teacher(
        &data,
        &TrainConfig { epochs: 1, base_width: 8, ..small_config() },
        &dir.path().join("teacher"),
    )
    .unwrap();
    let err = train_student(&data, &teacher.checkpoint, &small_config(), &dir.path().join("student")).unwrap_err();
    assert!(
        matches!(err, Error::ShapeMismatch { .. } | Error::ConfigMismatch(_)),
        "{err}"
    );
    assert!(!dir.path().join("student/checkpoints/best.ckpt").exists());
}

#[test]
fn class_count_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = experiment(dir.path()).train;
    let cfg = TrainConfig { num_classes: 4, ..small_config() };
    let err = train_baseline(&data, &cfg, &dir.path().join("b")).unwrap_err();
    assert!(matches!(err, Error::ConfigMismatch(_)), "{err}");
}

#[test]
fn evaluation_is_repeatable_and_teacher_free() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let spec = CorpusSpec::new(12, 16, 3, 5);
    let manifest = generate_corpus(&spec, &root.join("c")).unwrap();
    let parts = split(&manifest, (0.5, 0.25, 0.25), 1).unwrap();
    let data = TrainData::from_manifests(&parts.train, &parts.val).unwrap();
    let cfg = small_config();
    let teacher = train_teacher(&data, &cfg, &root.join("t")).unwrap();
    let student = train_student(&data, &teacher.checkpoint, &cfg, &root.join("s")).unwrap();
    let a = evaluate(&student.checkpoint, &parts.test, 100.0).unwrap();
    let b = evaluate(&student.checkpoint, &parts.test, 100.0).unwrap();
    assert_eq!(a.teacher_forwards, 0);
    assert_eq!(a.role, Role::Student);
    assert_eq!(a.report.sample_count, parts.test.len());
    a.write(&root.join("ea"), "eval").unwrap();
    b.write(&root.join("eb"), "eval").unwrap();
    assert_eq!(
        std::fs::read(root.join("ea/eval.csv")).unwrap(),
        std::fs::read(root.join("eb/eval.csv")).unwrap()
    );
    let (net, meta) = load_checkpoint(&student.checkpoint, Expectation::default()).unwrap();
    assert_eq!(net.param_count(), student.param_count);
    assert_eq!(meta.role, Role::Student);
}

#[test]
fn experiments_produce_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = experiment(dir.path());
    let cfg = TrainConfig { epochs: 1, ..small_config() };

    let sweep = alpha_sweep(&data, &[0.0, 2.0], &cfg, &dir.path().join("sweep")).unwrap();
    assert_eq!(sweep.rows.len(), 2);
    assert!(dir.path().join("sweep/plots/alpha_sweep.png").is_file());

    let rep = repeat_study(2, &cfg, &data, &dir.path().join("repeat")).unwrap();
    assert_eq!(rep.training_runs, 4);
    assert_eq!(rep.rows.len(), 4);
    for arm in [Arm::Baseline, Arm::Sikd] {
        for domain in ["intra", "cross"] {
            let s = rep.summary_for(arm, domain).unwrap();
            assert_eq!(s.runs, 2);
            assert!(s.std_dice.is_finite());
        }
    }

    let ab = teacher_input_ablation(&data, &cfg, &dir.path().join("ablation")).unwrap();
    let methods: Vec<&str> = ab.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["baseline", "original", "label_map", "classwise_mean"]);
    assert!(ab.rows.iter().all(|r| r.seed == cfg.seed && r.epochs == cfg.epochs));
}

#[test]
fn alpha_sweep_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let data = experiment(dir.path());
    let cfg = TrainConfig { epochs: 1, ..small_config() };
    let a = alpha_sweep(&data, &[2.0], &cfg, &dir.path().join("a")).unwrap();
    let b = alpha_sweep(&data, &[2.0], &cfg, &dir.path().join("b")).unwrap();
    assert_eq!(a.rows, b.rows);
}
