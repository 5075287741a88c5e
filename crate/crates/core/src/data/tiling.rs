use ndarray::{s, Array2, Array3};

use super::tile::{tile_id, Tile};
use crate::error::{Error, Result};

/// Default tile edge length in pixels.
pub const DEFAULT_TILE_SIZE: usize = 512;

/// What to do with the partial tiles along the right and bottom edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgePolicy {
    /// Pad with zero intensity / background and flag the padding as invalid.
    #[default]
    Pad,
    /// Discard partial tiles. The scene must be at least one tile in size.
    Drop,
}

/// A full-size image/mask pair before tiling.
#[derive(Debug, Clone)]
pub struct Scene {
    pub city: String,
    pub resolution_m: Option<f64>,
    pub image: Array3<u8>,
    pub mask: Array2<bool>,
}

/// Number of tile rows and columns produced for an `h`×`w` scene.
pub fn grid_shape(h: usize, w: usize, tile_size: usize, policy: EdgePolicy) -> (usize, usize) {
    match policy {
        EdgePolicy::Pad => (h.div_ceil(tile_size), w.div_ceil(tile_size)),
        EdgePolicy::Drop => (h / tile_size, w / tile_size),
    }
}

/// Cuts a scene into a row-major grid of non-overlapping square tiles.
///
/// Tiles are numbered `first_number, first_number + 1, ...` in row-major order.
pub fn crop_to_tiles(scene: &Scene, tile_size: usize, policy: EdgePolicy, first_number: usize) -> Result<Vec<Tile>> {
    let (h, w, c) = scene.image.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("cannot tile a zero-area scene".into()));
    }
    if tile_size == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    if scene.mask.dim() != (h, w) {
        return Err(Error::DimensionMismatch(format!(
            "scene image is {h}x{w} but mask is {}x{}",
            scene.mask.nrows(),
            scene.mask.ncols()
        )));
    }
    if policy == EdgePolicy::Drop && (h < tile_size || w < tile_size) {
        return Err(Error::InvalidArgument(format!(
            "scene {h}x{w} is smaller than tile size {tile_size} and padding is disabled"
        )));
    }
    let (rows, cols) = grid_shape(h, w, tile_size, policy);
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for col in 0..cols {
            let (y0, x0) = (r * tile_size, col * tile_size);
            let (y1, x1) = ((y0 + tile_size).min(h), (x0 + tile_size).min(w));
            let (th, tw) = (y1 - y0, x1 - x0);
            let mut image = Array3::zeros((tile_size, tile_size, c));
            let mut mask = Array2::from_elem((tile_size, tile_size), false);
            let mut valid = Array2::from_elem((tile_size, tile_size), false);
            image
                .slice_mut(s![..th, ..tw, ..])
                .assign(&scene.image.slice(s![y0..y1, x0..x1, ..]));
            mask.slice_mut(s![..th, ..tw]).assign(&scene.mask.slice(s![y0..y1, x0..x1]));
            valid.slice_mut(s![..th, ..tw]).fill(true);
            tiles.push(Tile {
                id: tile_id(&scene.city, first_number + tiles.len()),
                city: scene.city.clone(),
                resolution_m: scene.resolution_m,
                image,
                mask,
                valid,
            });
        }
    }
    Ok(tiles)
}

/// Stitches a row-major grid back into one padded image/mask pair.
pub fn reassemble(tiles: &[Tile], rows: usize, cols: usize) -> Result<(Array3<u8>, Array2<bool>)> {
    if tiles.len() != rows * cols || tiles.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} tiles cannot fill a {rows}x{cols} grid",
            tiles.len()
        )));
    }
    let ts = tiles[0].height();
    let mut image = Array3::zeros((rows * ts, cols * ts, tiles[0].image.dim().2));
    let mut mask = Array2::from_elem((rows * ts, cols * ts), false);
    for (i, t) in tiles.iter().enumerate() {
        let (y0, x0) = ((i / cols) * ts, (i % cols) * ts);
        image.slice_mut(s![y0..y0 + ts, x0..x0 + ts, ..]).assign(&t.image);
        mask.slice_mut(s![y0..y0 + ts, x0..x0 + ts]).assign(&t.mask);
    }
    Ok((image, mask))
}

/// Keeps tiles containing at least one building pixel, in their original order.
pub fn filter_background_only(tiles: Vec<Tile>) -> Vec<Tile> {
    tiles.into_iter().filter(Tile::has_building).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scene(h: usize, w: usize) -> Scene {
        Scene {
            city: "DE_Potsdam".into(),
            resolution_m: Some(0.09),
            image: Array3::from_shape_fn((h, w, 3), |(r, c, k)| ((r * 7 + c * 3 + k) % 251) as u8),
            mask: Array2::from_shape_fn((h, w), |(r, c)| (r / 3 + c / 5) % 2 == 0),
        }
    }

    #[test]
    fn exact_tile_gives_one_tile() {
        let tiles = crop_to_tiles(&scene(512, 512), DEFAULT_TILE_SIZE, EdgePolicy::Pad, 1).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].id, "DE_Potsdam_00001");
        assert!(tiles[0].valid.iter().all(|&v| v));
    }

    #[test]
    fn four_tiles_reassemble_to_input() {
        let sc = scene(1024, 1024);
        let tiles = crop_to_tiles(&sc, 512, EdgePolicy::Pad, 0).unwrap();
        assert_eq!(tiles.len(), 4);
        let (image, mask) = reassemble(&tiles, 2, 2).unwrap();
        assert_eq!(image, sc.image);
        assert_eq!(mask, sc.mask);
    }

    #[test]
    fn edge_remainders_are_padded_and_flagged() {
        let sc = scene(10, 7);
        let tiles = crop_to_tiles(&sc, 4, EdgePolicy::Pad, 0).unwrap();
        assert_eq!(tiles.len(), 3 * 2);
        let last = &tiles[5];
        assert_eq!(last.valid.iter().filter(|&&v| v).count(), 2 * 3);
        assert!(last.image.slice(s![2.., .., ..]).iter().all(|&v| v == 0));
        assert!(!last.mask[[3, 3]]);
    }

    #[test]
    fn drop_policy() {
        assert_eq!(crop_to_tiles(&scene(10, 7), 4, EdgePolicy::Drop, 0).unwrap().len(), 2);
        assert!(crop_to_tiles(&scene(3, 7), 4, EdgePolicy::Drop, 0).is_err());
        assert_eq!(crop_to_tiles(&scene(3, 3), 4, EdgePolicy::Pad, 0).unwrap().len(), 1);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(crop_to_tiles(&scene(0, 5), 4, EdgePolicy::Pad, 0).is_err());
        let mut sc = scene(8, 8);
        sc.mask = Array2::from_elem((8, 7), false);
        assert!(matches!(crop_to_tiles(&sc, 4, EdgePolicy::Pad, 0), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn filter_keeps_tiles_with_buildings() {
        let tiles: Vec<Tile> = (0..10)
            .map(|i| {
                let mut mask = Array2::from_elem((4, 4), false);
                if ![2, 5, 9].contains(&i) {
                    mask[[i % 4, (i * 3) % 4]] = true;
                }
                Tile::new(tile_id("X", i), "X", Array3::zeros((4, 4, 3)), mask).unwrap()
            })
            .collect();
        let expected: Vec<String> = tiles
            .iter()
            .filter(|t| t.mask.iter().any(|&b| b))
            .map(|t| t.id.clone())
            .collect();
        let kept = filter_background_only(tiles);
        assert_eq!(kept.len(), 7);
        assert_eq!(kept.iter().map(|t| t.id.clone()).collect::<Vec<_>>(), expected);
    }

    proptest! {
        #[test]
        fn reassembly_reproduces_padded_scene(h in 1usize..30, w in 1usize..30, ts in 1usize..12) {
            let sc = scene(h, w);
            let tiles = crop_to_tiles(&sc, ts, EdgePolicy::Pad, 0).unwrap();
            let (rows, cols) = grid_shape(h, w, ts, EdgePolicy::Pad);
            let (image, mask) = reassemble(&tiles, rows, cols).unwrap();
            prop_assert_eq!(image.slice(s![..h, ..w, ..]), sc.image.view());
            prop_assert_eq!(mask.slice(s![..h, ..w]), sc.mask.view());
            prop_assert!(image.slice(s![h.., .., ..]).iter().all(|&v| v == 0));
            prop_assert!(!mask.slice(s![.., w..]).iter().any(|&b| b));
        }
    }
}
