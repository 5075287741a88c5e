use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{split_trainval, DatasetManifest, ManifestEntry, Split, SplitRule};
use super::tile::{read_image, read_mask, save_tile, Tile};
use super::tiling::{crop_to_tiles, filter_background_only, EdgePolicy, Scene, DEFAULT_TILE_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareConfig {
    /// Directory with `images/<city>.tif` and matching `labels/<city>.tif`
    /// scenes. These become train/val tiles.
    pub scenes: Option<PathBuf>,
    /// Same layout; these become test tiles.
    pub test_scenes: Option<PathBuf>,
    pub tile_size: usize,
    pub edge: EdgePolicy,
    /// Drop tiles without any building pixel.
    pub drop_background: bool,
    pub train_ratio: f64,
    /// Exact `[train, val]` counts; overrides `train_ratio`.
    pub split_counts: Option<[usize; 2]>,
    pub resolution_m: Option<f64>,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            scenes: None,
            test_scenes: None,
            tile_size: DEFAULT_TILE_SIZE,
            edge: EdgePolicy::Pad,
            drop_background: true,
            train_ratio: 0.9,
            split_counts: None,
            resolution_m: None,
        }
    }
}

impl PrepareConfig {
    pub fn split_rule(&self) -> SplitRule {
        match self.split_counts {
            Some([train, val]) => SplitRule::Counts { train, val },
            None => SplitRule::Ratio(self.train_ratio),
        }
    }
}

const IMAGE_EXTENSIONS: [&str; 4] = ["tif", "tiff", "png", "jpg"];

/// `(image, mask)` path pairs under `dir/images` and `dir/labels`, sorted by
/// file stem. Every image needs a label with the same stem.
pub fn discover_scenes(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let images = dir.join("images");
    let labels = dir.join("labels");
    let listing = fs::read_dir(&images).map_err(|e| Error::io(&images, e))?;
    let mut pairs = Vec::new();
    for entry in listing {
        let path = entry.map_err(|e| Error::io(&images, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_owned();
        let label = IMAGE_EXTENSIONS
            .iter()
            .map(|e| labels.join(&stem).with_extension(e))
            .find(|p| p.exists())
            .ok_or_else(|| Error::MissingFile(labels.join(&stem).with_extension("tif")))?;
        pairs.push((path, label));
    }
    pairs.sort();
    Ok(pairs)
}

fn city_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn tiles_from(dir: &Path, cfg: &PrepareConfig, next_number: &mut HashMap<String, usize>) -> Result<Vec<Tile>> {
    let mut out = Vec::new();
    for (image, label) in discover_scenes(dir)? {
        let scene = Scene {
            city: city_of(&image),
            resolution_m: cfg.resolution_m,
            image: read_image(&image)?,
            mask: read_mask(&label)?,
        };
        let first = next_number.entry(scene.city.clone()).or_insert(0);
        let tiles = crop_to_tiles(&scene, cfg.tile_size, cfg.edge, *first)?;
        *first += tiles.len();
        out.extend(if cfg.drop_background { filter_background_only(tiles) } else { tiles });
    }
    Ok(out)
}

/// Tiles every scene, optionally drops background-only tiles, splits the
/// trainval tiles, and writes `root/images/<id>.tif`, `root/labels/<id>.tif`
/// and `root/manifest.tsv`. Padding added at scene edges is stored as
/// background.
pub fn prepare_dataset(cfg: &PrepareConfig, root: &Path, seed: u64) -> Result<DatasetManifest> {
    let scenes = cfg
        .scenes
        .as_deref()
        .ok_or_else(|| Error::Config("data.prepare.scenes is required for prepare".into()))?;
    let mut numbers = HashMap::new();
    let mut labelled: Vec<(Tile, Split)> = tiles_from(scenes, cfg, &mut numbers)?
        .into_iter()
        .map(|t| (t, Split::Train))
        .collect();
    if let Some(test) = &cfg.test_scenes {
        labelled.extend(tiles_from(test, cfg, &mut numbers)?.into_iter().map(|t| (t, Split::Test)));
    }
    let entries = labelled
        .iter()
        .map(|(t, split)| ManifestEntry {
            id: t.id.clone(),
            image: PathBuf::from("images").join(format!("{}.tif", t.id)),
            mask: PathBuf::from("labels").join(format!("{}.tif", t.id)),
            city: t.city.clone(),
            split: *split,
        })
        .collect();
    let manifest = split_trainval(&DatasetManifest { entries, seed }, cfg.split_rule(), seed)?;
    for ((tile, _), entry) in labelled.iter().zip(&manifest.entries) {
        save_tile(tile, &root.join(&entry.image), &root.join(&entry.mask))?;
    }
    manifest.write(&root.join("manifest.tsv"))?;
    Ok(manifest)
}
