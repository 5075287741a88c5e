//! Train a small model with BSM, score it on the held-out style and write
//! the report files (key=value text, table, bar chart).
//!
//! cargo run --release --example train_and_report -- [iterations] [out_dir]

use std::path::PathBuf;

use bsm::bsm::BsmConfig;
use bsm::data::{generate_tiles, Split, SyntheticSpec};
use bsm::eval::{emit_report, evaluate, render_report_table};
use bsm::model::{SegModel, SegModelConfig};
use bsm::train::{train, TrainConfig, TrainOptions};

fn main() -> bsm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iterations = args.first().map_or(100, |s| s.parse().expect("iterations"));
    let out = args.get(1).map_or_else(|| std::env::temp_dir().join("bsm-train"), PathBuf::from);

    let tiles = generate_tiles(&SyntheticSpec::default())?;
    let (test, train_tiles): (Vec<_>, Vec<_>) = tiles.into_iter().partition(|(_, s)| *s == Split::Test);
    let train_tiles: Vec<_> = train_tiles.into_iter().filter(|(_, s)| *s == Split::Train).map(|(t, _)| t).collect();
    let test: Vec<_> = test.into_iter().map(|(t, _)| t).collect();

    let mut model = SegModel::new(SegModelConfig::tiny())?;
    let cfg = TrainConfig { base_lr: 1e-3, batch_size: 4, total_iterations: Some(iterations), ..Default::default() };
    let opts = TrainOptions { out_dir: Some(out.join("train")), seed: 0, workers: 2, trace: true, config_hash: None };
    let outcome = train(&mut model, &train_tiles, &BsmConfig::default(), &cfg, &opts)?;
    for r in outcome.log.iter().step_by((iterations / 10).max(1)) {
        println!("iter {:5}  loss {:.4}  lr {:.2e}", r.iteration, r.loss, r.lr);
    }

    let report = evaluate(&model, &test, 2, "example")?;
    println!("{}", render_report_table(&report));
    for path in emit_report(&report, &out.join("eval"))? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
