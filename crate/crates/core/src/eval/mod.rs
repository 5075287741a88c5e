//! IoU scoring, per-city aggregation, the submodule ablation harness, and
//! report files.

mod metrics;
mod report;

use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bsm::{BsmConfig, Submodules};
use crate::data::Tile;
use crate::error::{Error, Result};
use crate::model::{SegModel, SegModelConfig};
use crate::train::{train, TrainConfig, TrainOptions};

pub use metrics::{aggregate, confusion_counts, iou, CityScore, ConfusionCounts, EvalReport, ImageScore};
pub use report::{
    emit_ablation, emit_report, parse_ablation, parse_report, render_ablation_table, render_report_table,
    ABLATION_FILE, REPORT_FILE,
};

/// Hex SHA-256 of `text`.
pub fn hash_text(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn score_tile(model: &SegModel, tile: &Tile) -> Result<ImageScore> {
    let batch = crate::batch::SampleBatch::from_tiles([tile])?;
    let pred = model.predict_masks(&batch.images)?;
    let counts = confusion_counts(
        pred.index_axis(ndarray::Axis(0), 0),
        tile.mask.view(),
        tile.valid.view(),
    )?;
    Ok(ImageScore {
        id: tile.id.clone(),
        city: tile.city.clone(),
        counts,
    })
}

/// Scores every tile one at a time (no augmentation), spreading tiles over
/// `workers` threads. Results keep the input order.
pub fn evaluate(model: &SegModel, tiles: &[Tile], workers: usize, config_hash: &str) -> Result<EvalReport> {
    let start = Instant::now();
    let workers = workers.max(1).min(tiles.len().max(1));
    let scores: Vec<Result<ImageScore>> = if workers == 1 {
        tiles.iter().map(|t| score_tile(model, t)).collect()
    } else {
        let chunk = tiles.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = tiles
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|t| score_tile(model, t)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("scoring thread panicked"))
                .collect()
        })
    };
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    aggregate(scores, config_hash, start.elapsed().as_secs_f64())
}

/// Everything an ablation holds fixed across rows.
#[derive(Debug, Clone, Serialize)]
pub struct AblationSetup {
    pub model: SegModelConfig,
    pub bsm: BsmConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub workers: usize,
}

impl AblationSetup {
    /// Hash of the shared protocol: seed, configs except the enabled set,
    /// and the ordered tile ids.
    pub fn protocol_hash(&self, train_tiles: &[Tile], test_tiles: &[Tile]) -> Result<String> {
        let neutral = AblationSetup {
            bsm: self.bsm.with_enabled(Submodules::NONE),
            workers: 0,
            ..self.clone()
        };
        let mut text = toml::to_string(&neutral).map_err(|e| Error::Config(e.to_string()))?;
        for t in train_tiles.iter().chain(test_tiles) {
            text.push_str(&t.id);
            text.push('\n');
        }
        Ok(hash_text(&text))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub submodules: Submodules,
    pub protocol_hash: String,
    /// Training plus evaluation wall-clock time.
    pub seconds: f64,
    pub outcome: std::result::Result<EvalReport, String>,
}

impl AblationRow {
    pub fn miou(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(EvalReport::miou)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, s: Submodules) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.submodules == s)
    }
}

/// Trains a fresh model per row on `train_tiles` and scores it on
/// `test_tiles`. A failing row is recorded and the rest still run.
pub fn run_ablation(
    train_tiles: &[Tile],
    test_tiles: &[Tile],
    setup: &AblationSetup,
    rows: &[Submodules],
) -> Result<AblationTable> {
    let protocol_hash = setup.protocol_hash(train_tiles, test_tiles)?;
    let mut table = AblationTable::default();
    for &submodules in rows {
        let start = Instant::now();
        let outcome = run_row(train_tiles, test_tiles, setup, submodules, &protocol_hash).map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            log::warn!("ablation row {submodules} failed: {e}");
        }
        table.rows.push(AblationRow {
            submodules,
            protocol_hash: protocol_hash.clone(),
            seconds: start.elapsed().as_secs_f64(),
            outcome,
        });
    }
    Ok(table)
}

fn run_row(
    train_tiles: &[Tile],
    test_tiles: &[Tile],
    setup: &AblationSetup,
    submodules: Submodules,
    protocol_hash: &str,
) -> Result<EvalReport> {
    let mut model = SegModel::new(setup.model.clone())?;
    let opts = TrainOptions {
        seed: setup.seed,
        workers: setup.workers,
        ..Default::default()
    };
    train(&mut model, train_tiles, &setup.bsm.with_enabled(submodules), &setup.train, &opts)?;
    evaluate(&model, test_tiles, setup.workers, protocol_hash)
}

#[cfg(test)]
mod tests;
