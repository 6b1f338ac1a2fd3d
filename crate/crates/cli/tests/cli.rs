use std::path::Path;
use std::process::{Command, Output};

use sikd_core::data::{generate_corpus, split, CorpusSpec, DatasetManifest};
use sikd_core::pipeline::{self, TrainConfig};

fn sikd(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sikd"))
        .env("SIKD_OUT", out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn make_small_data(out: &Path) {
    let o = sikd(out, &["make-data", "--samples", "12", "--size", "16", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = sikd(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("train-student"));
}

#[test]
fn unknown_verb_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sikd(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error: unknown command"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn student_without_teacher_names_the_option() {
    let dir = tempfile::tempdir().unwrap();
    let o = sikd(dir.path(), &["train-student", "--data", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--teacher"), "{}", stderr(&o));
}

#[test]
fn unknown_option_is_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let o = sikd(dir.path(), &["make-data", "--bogus", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--bogus"));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn missing_input_file_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sikd(dir.path(), &["train-teacher", "--data", "nowhere"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere"));
}

#[test]
fn invalid_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    make_small_data(dir.path());
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"epochs": 1, "not_a_key": 3}"#).unwrap();
    let data = dir.path().join("data");
    let o = sikd(
        dir.path(),
        &["train-teacher", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not_a_key"));
}

#[test]
fn flags_override_config_file_and_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    make_small_data(dir.path());
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"epochs": 1, "seed": 1, "base_width": 4}"#).unwrap();
    let data = dir.path().join("data");
    let o = sikd(
        dir.path(),
        &[
            "train-baseline",
            "--data",
            data.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "9",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("baseline/config.json")).unwrap();
    let echoed: TrainConfig = serde_json::from_str(&text).unwrap();
    let want = TrainConfig {
        epochs: 1,
        seed: 9,
        base_width: 4,
        ..TrainConfig::default()
    };
    assert_eq!(echoed, want);
}

#[test]
fn make_data_matches_library_output() {
    let dir = tempfile::tempdir().unwrap();
    make_small_data(dir.path());
    let lib_root = dir.path().join("lib");
    let mut spec = CorpusSpec::new(12, 16, 3, 4);
    spec.texture.noise_amplitude = 0.05;
    let manifest = generate_corpus(&spec, &lib_root).unwrap();
    let parts = split(&manifest, (0.7, 0.1, 0.2), 4).unwrap();
    parts.test.write(&lib_root.join("test.json")).unwrap();
    let cli_root = dir.path().join("data");
    for f in ["manifest.json", "test.json", "images/s00003.png", "labels/s00011.png"] {
        assert_eq!(
            std::fs::read(cli_root.join(f)).unwrap(),
            std::fs::read(lib_root.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn train_eval_report_round_trip_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    make_small_data(out);
    let data = out.join("data");
    let d = data.to_str().unwrap();
    let common = ["--epochs", "1", "--base-width", "4"];

    let mut args = vec!["train-teacher", "--data", d];
    args.extend(common);
    assert!(sikd(out, &args).status.success());
    let teacher = out.join("teacher");
    let mut args = vec!["train-student", "--data", d, "--teacher", teacher.to_str().unwrap()];
    args.extend(common);
    let o = sikd(out, &args);
    assert!(o.status.success(), "{}", stderr(&o));

    let student = out.join("student");
    let o = sikd(out, &["eval", "--checkpoint", student.to_str().unwrap(), "--data", d]);
    assert!(o.status.success(), "{}", stderr(&o));

    let test = DatasetManifest::read(&data.join("test.json")).unwrap();
    let lib = pipeline::evaluate(&student.join(pipeline::CHECKPOINT_FILE), &test, 100.0).unwrap();
    assert_eq!(lib.teacher_forwards, 0);
    lib.write(&out.join("lib_metrics"), "eval").unwrap();
    assert_eq!(
        std::fs::read(student.join("metrics/eval.csv")).unwrap(),
        std::fs::read(out.join("lib_metrics/eval.csv")).unwrap()
    );

    let o = sikd(out, &["report", "--kind", "summary-csv", "--run", student.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = std::fs::read(out.join("report/summary.csv")).unwrap();
    let lines = String::from_utf8(first.clone()).unwrap();
    assert_eq!(lines.lines().count(), 2, "header plus one intra row:\n{lines}");
    let o = sikd(out, &["report", "--kind", "summary-csv", "--run", student.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(first, std::fs::read(out.join("report/summary.csv")).unwrap());
}

#[test]
fn report_on_missing_metrics_lists_files() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("empty_run");
    std::fs::create_dir(&run).unwrap();
    let o = sikd(dir.path(), &["report", "--kind", "alpha-plot", "--run", run.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha_sweep.csv"), "{}", stderr(&o));
}
