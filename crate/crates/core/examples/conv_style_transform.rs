//! Style mixing in a learned feature space instead of on pixels.
//!
//! Writes a small encoder/decoder weight archive (one pooling stage, 3×3
//! convolutions), loads it the way a configuration would, and mixes a batch
//! through it.

use std::collections::HashMap;

use bsm::data::{generate_tiles, SyntheticSpec};
use bsm::nn::Archive;
use bsm::rng::{stream, Purpose};
use bsm::stylemix::{style_mix_batch, ConvTransform, FeatureTransform, StyleMixConfig, TOPOLOGY_KEY};
use bsm::SampleBatch;
use ndarray::{ArrayD, IxDyn};

fn identity_conv(channels: usize, k: usize) -> ArrayD<f64> {
    let mut w = ArrayD::zeros(IxDyn(&[channels, channels, k, k]));
    for c in 0..channels {
        w[[c, c, k / 2, k / 2]] = 1.0;
    }
    w
}

fn main() -> bsm::Result<()> {
    let topology = "\
encoder conv 3 3 3 relu reflect
encoder maxpool
decoder upsample
decoder conv 3 3 3 none reflect";
    let mut archive = Archive::default();
    archive.metadata = HashMap::from([(TOPOLOGY_KEY.to_string(), topology.to_string())]);
    for name in ["encoder.0", "decoder.1"] {
        archive.tensors.push((format!("{name}.weight"), identity_conv(3, 3)));
        archive.tensors.push((format!("{name}.bias"), ArrayD::zeros(IxDyn(&[3]))));
    }
    let path = std::env::temp_dir().join("bsm-style-transform.safetensors");
    archive.save(&path)?;

    let transform = FeatureTransform::Conv(std::sync::Arc::new(ConvTransform::load(&path)?));
    let tiles: Vec<_> = generate_tiles(&SyntheticSpec::default())?.into_iter().map(|(t, _)| t).step_by(16).collect();
    let batch = SampleBatch::from_tiles(&tiles)?;
    let cfg = StyleMixConfig::default();
    let (mixed, trace) = style_mix_batch(&batch, &cfg, &transform, &mut stream(1, Purpose::Preview, 0))?;
    for (i, &j) in trace.permutation.iter().enumerate() {
        let mean = |b: &SampleBatch| b.images.index_axis(ndarray::Axis(0), i).mean().unwrap_or(0.0);
        println!("{} styled by {}: mean {:.1} -> {:.1}", batch.ids[i], batch.ids[j], mean(&batch), mean(&mixed));
    }
    Ok(())
}
