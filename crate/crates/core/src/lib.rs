pub mod augment;
pub mod batch;
pub mod bsm;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod rng;
pub mod stylemix;
pub mod train;

pub use batch::SampleBatch;
pub use error::{Error, Result};
