//! Cut full-size scenes into fixed-size tiles with a train/val/test manifest.
//!
//! Builds two small scenes on the fly, then runs the same preparation the
//! `prepare` command uses.

use bsm::data::{prepare_dataset, write_image, write_mask, EdgePolicy, PrepareConfig, Split};
use ndarray::{Array2, Array3};

fn write_scene(dir: &std::path::Path, city: &str, h: usize, w: usize) -> bsm::Result<()> {
    let image = Array3::from_shape_fn((h, w, 3), |(y, x, c)| ((y * 3 + x * 5 + c * 40) % 256) as u8);
    let mask = Array2::from_shape_fn((h, w), |(y, x)| y < h / 2 && (x / 20) % 3 == 0);
    write_image(&dir.join(format!("images/{city}.tif")), &image)?;
    write_mask(&dir.join(format!("labels/{city}.tif")), &mask)
}

fn main() -> bsm::Result<()> {
    let work = std::env::temp_dir().join("bsm-prepare");
    let (train_dir, test_dir) = (work.join("scenes/train"), work.join("scenes/test"));
    write_scene(&train_dir, "US_Austin", 200, 260)?;
    write_scene(&test_dir, "US_Kitsap", 130, 130)?;

    let cfg = PrepareConfig {
        scenes: Some(train_dir),
        test_scenes: Some(test_dir),
        tile_size: 64,
        edge: EdgePolicy::Pad,
        drop_background: true,
        split_counts: None,
        ..Default::default()
    };
    let m = prepare_dataset(&cfg, &work.join("tiles"), 42)?;
    println!(
        "{} tiles: train {}, val {}, test {}",
        m.entries.len(),
        m.count(Split::Train),
        m.count(Split::Val),
        m.count(Split::Test)
    );
    for e in m.entries.iter().take(5) {
        println!("{}\t{}\t{}", e.id, e.city, e.split);
    }
    Ok(())
}
