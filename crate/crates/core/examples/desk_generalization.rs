//! Train on the SynA style only, score on the unseen SynB style, for each
//! ablation row and several seeds.
//!
//! cargo run --release --example desk_generalization -- [iterations] [seeds] [rows]
//! e.g. `... -- 300 3 baseline,GA+CA+SM`

use bsm::bsm::{BsmConfig, Submodules};
use bsm::data::{generate_tiles, Split, SyntheticSpec};
use bsm::eval::{render_ablation_table, run_ablation, AblationSetup};
use bsm::model::SegModelConfig;
use bsm::train::TrainConfig;

fn main() -> bsm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iterations = args.first().map_or(300, |s| s.parse().expect("iterations"));
    let seeds: u64 = args.get(1).map_or(3, |s| s.parse().expect("seed count"));
    let rows: Vec<Submodules> = match args.get(2) {
        Some(list) => list.split(',').map(|s| s.parse()).collect::<bsm::Result<_>>()?,
        None => Submodules::ablation_rows().to_vec(),
    };

    let spec = SyntheticSpec::default();
    let tiles = generate_tiles(&spec)?;
    let train: Vec<_> = tiles.iter().filter(|(_, s)| *s != Split::Test).map(|(t, _)| t.clone()).collect();
    let test: Vec<_> = tiles.iter().filter(|(_, s)| *s == Split::Test).map(|(t, _)| t.clone()).collect();
    println!("{} SynA training tiles, {} SynB test tiles", train.len(), test.len());

    for seed in 0..seeds {
        let setup = AblationSetup {
            model: SegModelConfig { init_seed: seed, ..SegModelConfig::tiny() },
            bsm: BsmConfig::default(),
            train: TrainConfig {
                base_lr: 1e-3,
                batch_size: 4,
                total_iterations: Some(iterations),
                ..Default::default()
            },
            seed,
            workers: 1,
        };
        let table = run_ablation(&train, &test, &setup, &rows)?;
        println!("seed {seed}\n{}", render_ablation_table(&table));
    }
    Ok(())
}
