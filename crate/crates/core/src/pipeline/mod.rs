//! Training protocol, evaluation and experiments.

mod config;
mod eval;
mod experiments;
mod train;

pub use config::{TeacherInput, TrainConfig};
pub use eval::{evaluate, evaluate_network, evaluate_samples, Evaluation};
pub use experiments::{
    alpha_sweep, mean_std, plot_alpha, plot_distribution, read_csv, repeat_seed, repeat_study, summarize,
    teacher_input_ablation, AblationReport, AblationRow, Arm, DomainScores, ExperimentData, RepeatReport, RepeatRow,
    SummaryRow, SweepReport, SweepRow, ABLATION_CSV, ALPHA_SWEEP_CSV, REPEAT_CSV, REPEAT_SUMMARY_CSV,
};
pub use train::{
    crop, forward_padded, pad_to_multiple, predict, prepare_teacher_inputs, teacher_forwards, teacher_input,
    train_baseline, train_student, train_teacher, EpochRecord, RunRecord, TrainData, CHECKPOINT_FILE,
};
