//! Re-style one synthetic tile with another's channel statistics.
//!
//! Prints the per-channel mean and std of content, style and the mixed
//! result for a few values of alpha.

use bsm::data::{render_tile, SyntheticSpec};
use bsm::stylemix::{adain, channel_stats, mix_interpolate, FeatureTensor};
use bsm::SampleBatch;

fn describe(label: &str, f: &FeatureTensor) {
    let s = channel_stats(f);
    let fmt = |v: &ndarray::Array2<f64>| v.row(0).iter().map(|x| format!("{x:6.1}")).collect::<Vec<_>>().join(" ");
    println!("{label:>12}  mean {}   std {}", fmt(&s.mean), fmt(&s.std));
}

fn main() -> bsm::Result<()> {
    let spec = SyntheticSpec::default();
    let content = SampleBatch::from_tiles([&render_tile(&spec, 0, 0)])?;
    let style = SampleBatch::from_tiles([&render_tile(&spec, 1, 0)])?;
    let f_c = FeatureTensor::pixels(content.images)?;
    let f_s = FeatureTensor::pixels(style.images)?;
    describe("content", &f_c);
    describe("style", &f_s);
    let f_cs = adain(&f_c, &f_s, 1e-5)?;
    for alpha in [0.0, 0.5, 1.0] {
        describe(&format!("alpha {alpha}"), &mix_interpolate(&f_cs, &f_c, alpha)?);
    }
    Ok(())
}
