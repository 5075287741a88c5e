//! Tiles, label rasters, manifests and the synthetic two-style dataset.

mod manifest;
mod prepare;
mod synthetic;
mod tile;
mod tiling;

pub use manifest::{split_trainval, DatasetManifest, ManifestEntry, Split, SplitRule};
pub use prepare::{discover_scenes, prepare_dataset, PrepareConfig};
pub use synthetic::{generate_synthetic_dataset, generate_tiles, render_tile, StyleParams, SyntheticSpec};
pub use tile::{
    decode_mask, encode_mask, load_tile, parse_tile_id, read_image, read_mask, save_tile, tile_id, write_image,
    write_mask, Tile, BACKGROUND, BUILDING,
};
pub use tiling::{crop_to_tiles, filter_background_only, grid_shape, reassemble, EdgePolicy, Scene, DEFAULT_TILE_SIZE};
