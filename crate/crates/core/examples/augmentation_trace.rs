//! Push a batch through the gated GA → CA → SM pipeline and print the
//! per-batch trace lines, then show that a trace replays exactly.

use bsm::bsm::{bsm_apply, BsmConfig};
use bsm::data::{generate_tiles, SyntheticSpec};
use bsm::rng::{stream, Purpose};
use bsm::stylemix::FeatureTransform;
use bsm::SampleBatch;

fn main() -> bsm::Result<()> {
    let seed = 11;
    let tiles: Vec<_> = generate_tiles(&SyntheticSpec::default())?.into_iter().map(|(t, _)| t).take(4).collect();
    let batch = SampleBatch::from_tiles(&tiles)?;
    let cfg = BsmConfig::default();
    for iteration in 0..6u64 {
        let mut rng = stream(seed, Purpose::Augment, iteration);
        let (out, trace) = bsm_apply(&batch, &cfg, &FeatureTransform::Pixel, &mut rng)?;
        let changed = out.images.iter().zip(&batch.images).filter(|(a, b)| a != b).count();
        println!("{}\tchanged_values={changed}", trace.to_line(iteration, seed));
    }

    let (a, _) = bsm_apply(&batch, &cfg, &FeatureTransform::Pixel, &mut stream(seed, Purpose::Augment, 3))?;
    let (b, _) = bsm_apply(&batch, &cfg, &FeatureTransform::Pixel, &mut stream(seed, Purpose::Augment, 3))?;
    println!("replay of iteration 3 identical: {}", a == b);
    Ok(())
}
