//! Geometric (GA) and color (CA) augmentation of image/mask batches.

mod color;
mod config;
mod geometric;

pub use color::{apply_color, color_sample, gaussian_blur, ColorParams};
pub use config::{AugmentationConfig, Interpolation, DEFAULT_SCALE_RANGE};
pub use geometric::{apply_geometric, replay_geometric, scale_then_fit, GeometricParams};
