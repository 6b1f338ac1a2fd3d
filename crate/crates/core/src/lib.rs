//! Shape-intensity knowledge distillation for semantic segmentation.
//!
//! A teacher network is trained on class-wise averaged images, which keep
//! object shape and class-level intensity but no texture. A student with the
//! same architecture is then trained on the original images with an extra
//! mean-squared-error term pulling its penultimate features towards the
//! frozen teacher's. Only the student is needed at inference time.

pub mod average;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod seed;
pub mod tensor;

pub use average::{classwise_average, intensity_stats, is_classwise_constant, IntensityStats};
pub use error::{Error, Result};
pub use image::{LabelMap, PixelSpacing, RasterImage, SamplePair};
pub use model::{FeatureBlock, ModelConfig, Network, NetworkOutput};
pub use tensor::{Real, Tensor};
