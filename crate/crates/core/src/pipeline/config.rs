//! Training configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Role;
use crate::error::{Error, Result};
use crate::losses::{SegLoss, DICE_SMOOTH};
use crate::model::ModelConfig;
use crate::optim::OptimizerKind;
use crate::seed::{derive_seed, Stream};

/// What the teacher is trained on and fed during distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherInput {
    ClasswiseMean,
    Original,
    LabelMap,
}

impl TeacherInput {
    pub const ALL: [TeacherInput; 3] = [TeacherInput::Original, TeacherInput::LabelMap, TeacherInput::ClasswiseMean];

    pub fn name(self) -> &'static str {
        match self {
            TeacherInput::ClasswiseMean => "classwise_mean",
            TeacherInput::Original => "original",
            TeacherInput::LabelMap => "label_map",
        }
    }
}

/// Flat, fully resolved training configuration. Serialized as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub alpha: f64,
    pub teacher_input: TeacherInput,
    pub seg_loss: SegLoss,
    pub seed: u64,
    pub horizontal_flip: bool,
    pub num_classes: usize,
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub dice_smooth: f64,
    pub hd_percentile: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::AdaptiveMoments,
            alpha: 2.0,
            teacher_input: TeacherInput::ClasswiseMean,
            seg_loss: SegLoss::Ce,
            seed: 0,
            horizontal_flip: true,
            num_classes: 3,
            in_channels: 1,
            base_width: 16,
            depth: 2,
            dice_smooth: DICE_SMOOTH,
            hd_percentile: 100.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::validation(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.dice_smooth.is_finite() && self.dice_smooth > 0.0) {
            return Err(Error::validation("dice_smooth must be positive"));
        }
        if !(self.hd_percentile > 0.0 && self.hd_percentile <= 100.0) {
            return Err(Error::validation(format!(
                "hd_percentile must be in (0, 100], got {}",
                self.hd_percentile
            )));
        }
        if self.num_classes > 256 {
            return Err(Error::validation("num_classes must be at most 256"));
        }
        self.model_config(Role::Student).validate()
    }

    /// Architecture for `role`. Teachers drop skip connections; students and
    /// baselines share one initialization stream.
    pub fn model_config(&self, role: Role) -> ModelConfig {
        let (skip, stream) = match role {
            Role::Teacher => (false, Stream::TeacherInit),
            Role::Student | Role::Baseline => (true, Stream::StudentInit),
        };
        ModelConfig {
            num_classes: self.num_classes,
            in_channels: self.in_channels,
            base_width: self.base_width,
            depth: self.depth,
            skip_connections: skip,
            seed: derive_seed(self.seed, stream, 0),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the pretty JSON form.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_json().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}
