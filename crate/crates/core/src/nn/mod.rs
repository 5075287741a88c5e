//! Minimal dense CNN toolkit: kernels with hand-written adjoints, a named
//! parameter store, and a weight archive format.

pub mod archive;
pub mod layers;
pub mod ops;
pub mod params;

pub use archive::Archive;
pub use layers::{AttentionCache, AttentionFusion, ChannelAttention, Conv2d, PositionAttention};
pub use ops::Padding;
pub use params::{Grads, ParamId, Params};
