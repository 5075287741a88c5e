//! Render the two-style synthetic dataset to disk and summarise it.
//!
//! cargo run --example synthetic_dataset -- [out_dir]

use std::path::PathBuf;

use bsm::data::{generate_synthetic_dataset, DatasetManifest, Split, SyntheticSpec};

fn main() -> bsm::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("bsm-synthetic"), PathBuf::from);
    let spec = SyntheticSpec::default();
    generate_synthetic_dataset(&spec, &out)?;

    let manifest = DatasetManifest::read(&out.join("manifest.tsv"))?;
    manifest.validate(&out)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let tiles = manifest.load_split(&out, split, 2)?;
        let building: usize = tiles.iter().map(|t| t.mask.iter().filter(|&&b| b).count()).sum();
        let pixels: usize = tiles.iter().map(|t| t.mask.len()).sum();
        let mean: Vec<f64> = (0..3)
            .map(|c| {
                let s: f64 = tiles.iter().map(|t| t.image.index_axis(ndarray::Axis(2), c).iter().map(|&v| v as f64).sum::<f64>()).sum();
                s / pixels.max(1) as f64
            })
            .collect();
        println!(
            "{split:5} {:3} tiles  building {:5.1}%  mean RGB {:6.1} {:6.1} {:6.1}",
            tiles.len(),
            100.0 * building as f64 / pixels.max(1) as f64,
            mean[0],
            mean[1],
            mean[2]
        );
    }
    println!("written to {}", out.display());
    Ok(())
}
