//! Optimisation: losses, learning-rate schedule, Adam, and the training loop.

pub mod loss;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use loss::{downsample_labels, multiscale_loss, pixel_ce_loss, pixel_ce_loss_with_grad, weighted_scale_sum, MultiscaleLoss, SCALE_WEIGHTS};
pub use optim::Adam;
pub use schedule::poly_lr;
pub use trainer::{read_metrics, train, BatchOrder, LogRecord, TrainConfig, TrainOptions, TrainOutcome};
