use std::path::Path;

use image::{ColorType, ExtendedColorType, ImageReader};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Raster value used for building pixels in label maps.
pub const BUILDING: u8 = 255;
/// Raster value used for background pixels in label maps.
pub const BACKGROUND: u8 = 0;

/// One image patch with its aligned building mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    /// `city + number`, e.g. `US_Kitsap_00012`.
    pub id: String,
    pub city: String,
    pub resolution_m: Option<f64>,
    /// H×W×3 intensities.
    pub image: Array3<u8>,
    /// H×W, `true` = building.
    pub mask: Array2<bool>,
    /// H×W, `false` on padding pixels introduced by cropping.
    pub valid: Array2<bool>,
}

impl Tile {
    pub fn new(id: impl Into<String>, city: impl Into<String>, image: Array3<u8>, mask: Array2<bool>) -> Result<Self> {
        let (h, w, c) = image.dim();
        if c != 3 {
            return Err(Error::DimensionMismatch(format!("expected 3 image channels, got {c}")));
        }
        if mask.dim() != (h, w) {
            return Err(Error::DimensionMismatch(format!(
                "image is {h}x{w} but mask is {}x{}",
                mask.nrows(),
                mask.ncols()
            )));
        }
        Ok(Tile {
            id: id.into(),
            city: city.into(),
            resolution_m: None,
            image,
            valid: Array2::from_elem((h, w), true),
            mask,
        })
    }

    pub fn height(&self) -> usize {
        self.mask.nrows()
    }

    pub fn width(&self) -> usize {
        self.mask.ncols()
    }

    pub fn has_building(&self) -> bool {
        self.mask.iter().any(|&b| b)
    }
}

/// Builds a tile id following the `city + number` rule.
pub fn tile_id(city: &str, number: usize) -> String {
    format!("{city}_{number:05}")
}

/// Splits an id into its city prefix and trailing number.
///
/// Accepts both `Kitsap_0012` and `Kitsap0012`.
pub fn parse_tile_id(id: &str) -> Option<(&str, u64)> {
    let digits = id.len() - id.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 || digits == id.len() {
        return None;
    }
    let (head, number) = id.split_at(id.len() - digits);
    let city = head.strip_suffix('_').unwrap_or(head);
    if city.is_empty() {
        return None;
    }
    number.parse().ok().map(|n| (city, n))
}

/// Maps a {0,255} label raster to a boolean mask.
pub fn decode_mask(raster: &Array2<u8>) -> Result<Array2<bool>> {
    decode_mask_at(raster, Path::new("<memory>"))
}

fn decode_mask_at(raster: &Array2<u8>, path: &Path) -> Result<Array2<bool>> {
    if let Some(((row, col), &value)) = raster
        .indexed_iter()
        .find(|(_, &v)| v != BUILDING && v != BACKGROUND)
    {
        return Err(Error::InvalidMaskValue {
            path: path.to_path_buf(),
            value,
            row,
            col,
        });
    }
    Ok(raster.mapv(|v| v == BUILDING))
}

/// Inverse of [`decode_mask`].
pub fn encode_mask(mask: &Array2<bool>) -> Array2<u8> {
    mask.mapv(|b| if b { BUILDING } else { BACKGROUND })
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let image_err = |e: image::ImageError| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(image_err)
}

/// Reads a 3-channel 8-bit image (TIFF or PNG) as H×W×3.
pub fn read_image(path: &Path) -> Result<Array3<u8>> {
    let img = open_image(path)?;
    match img.color() {
        ColorType::Rgb8 | ColorType::Rgba8 | ColorType::L8 => {}
        other => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("unsupported color type {other:?}; expected 8-bit RGB"),
            })
        }
    }
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Array3::from_shape_vec((h as usize, w as usize, 3), rgb.into_raw())
        .map_err(|e| Error::DimensionMismatch(e.to_string()))
}

/// Reads a single-channel 8-bit {0,255} label raster.
pub fn read_mask(path: &Path) -> Result<Array2<bool>> {
    let img = open_image(path)?;
    if img.color() != ColorType::L8 {
        return Err(Error::Image {
            path: path.to_path_buf(),
            message: format!("mask must be single-channel 8-bit, got {:?}", img.color()),
        });
    }
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    let raster = Array2::from_shape_vec((h as usize, w as usize), luma.into_raw())
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    decode_mask_at(&raster, path)
}

/// Loads an image/mask pair. The tile id is the image file stem.
pub fn load_tile(image_path: &Path, mask_path: &Path) -> Result<Tile> {
    let image = read_image(image_path)?;
    let mask = read_mask(mask_path)?;
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let city = parse_tile_id(&id).map(|(c, _)| c.to_string()).unwrap_or_else(|| id.clone());
    Tile::new(id, city, image, mask).map_err(|e| match e {
        Error::DimensionMismatch(msg) => {
            Error::DimensionMismatch(format!("{} vs {}: {msg}", image_path.display(), mask_path.display()))
        }
        other => other,
    })
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

/// Writes H×W×3 data; the format follows the file extension.
pub fn write_image(path: &Path, image: &Array3<u8>) -> Result<()> {
    create_parent(path)?;
    let (h, w, _) = image.dim();
    let raw: Vec<u8> = image.iter().copied().collect();
    image::save_buffer(path, &raw, w as u32, h as u32, ExtendedColorType::Rgb8).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_mask(path: &Path, mask: &Array2<bool>) -> Result<()> {
    create_parent(path)?;
    let raster = encode_mask(mask);
    let (h, w) = raster.dim();
    let raw: Vec<u8> = raster.iter().copied().collect();
    image::save_buffer(path, &raw, w as u32, h as u32, ExtendedColorType::L8).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn save_tile(tile: &Tile, image_path: &Path, mask_path: &Path) -> Result<()> {
    write_image(image_path, &tile.image)?;
    write_mask(mask_path, &tile.mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_zero_raster_decodes_to_background() {
        let mask = decode_mask(&Array2::zeros((4, 5))).unwrap();
        assert!(mask.iter().all(|&b| !b));
    }

    #[test]
    fn value_255_is_building() {
        let mut raster = Array2::zeros((3, 3));
        raster[[1, 2]] = 255;
        let mask = decode_mask(&raster).unwrap();
        assert!(mask[[1, 2]]);
        assert_eq!(mask.iter().filter(|&&b| b).count(), 1);
    }

    #[test]
    fn other_values_are_rejected_with_location() {
        let mut raster = Array2::zeros((3, 3));
        raster[[2, 1]] = 1;
        match decode_mask(&raster) {
            Err(Error::InvalidMaskValue { value, row, col, .. }) => assert_eq!((value, row, col), (1, 2, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn encode_constant_masks() {
        assert!(encode_mask(&Array2::from_elem((2, 2), true)).iter().all(|&v| v == 255));
        assert!(encode_mask(&Array2::from_elem((2, 2), false)).iter().all(|&v| v == 0));
    }

    #[test]
    fn tile_ids() {
        assert_eq!(tile_id("US_Kitsap", 12), "US_Kitsap_00012");
        assert_eq!(parse_tile_id("US_Kitsap_00012"), Some(("US_Kitsap", 12)));
        assert_eq!(parse_tile_id("Vienna17"), Some(("Vienna", 17)));
        assert_eq!(parse_tile_id("Vienna"), None);
        assert_eq!(parse_tile_id("0042"), None);
    }

    #[test]
    fn load_tile_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("A_00001.png");
        let mask = dir.path().join("A_00001_mask.png");
        assert!(matches!(load_tile(&img, &mask), Err(Error::MissingFile(_))));

        write_image(&img, &Array3::zeros((4, 6, 3))).unwrap();
        write_mask(&mask, &Array2::from_elem((4, 5), false)).unwrap();
        assert!(matches!(load_tile(&img, &mask), Err(Error::DimensionMismatch(_))));

        let raw = vec![0u8, 255, 7, 0];
        image::save_buffer(&mask, &raw, 2, 2, ExtendedColorType::L8).unwrap();
        write_image(&img, &Array3::zeros((2, 2, 3))).unwrap();
        assert!(matches!(load_tile(&img, &mask), Err(Error::InvalidMaskValue { value: 7, .. })));
    }

    #[test]
    fn tiff_and_png_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let image = Array3::from_shape_fn((5, 7, 3), |(r, c, k)| (r * 31 + c * 7 + k * 50) as u8);
        let mask = Array2::from_shape_fn((5, 7), |(r, c)| (r + c) % 3 == 0);
        for ext in ["tif", "png"] {
            let ip = dir.path().join(format!("Wuxi_00003.{ext}"));
            let mp = dir.path().join(format!("Wuxi_00003_label.{ext}"));
            let tile = Tile::new("Wuxi_00003", "Wuxi", image.clone(), mask.clone()).unwrap();
            save_tile(&tile, &ip, &mp).unwrap();
            let back = load_tile(&ip, &mp).unwrap();
            assert_eq!(back, tile);
        }
    }

    proptest! {
        #[test]
        fn raster_decode_encode_is_identity(bits in proptest::collection::vec(any::<bool>(), 48)) {
            let raster = Array2::from_shape_vec((6, 8), bits.iter().map(|&b| if b { 255u8 } else { 0 }).collect()).unwrap();
            prop_assert_eq!(encode_mask(&decode_mask(&raster).unwrap()), raster);
        }

        #[test]
        fn mask_encode_decode_is_identity(bits in proptest::collection::vec(any::<bool>(), 48)) {
            let mask = Array2::from_shape_vec((8, 6), bits).unwrap();
            prop_assert_eq!(decode_mask(&encode_mask(&mask)).unwrap(), mask);
        }
    }
}
