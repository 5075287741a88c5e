use ndarray::{Array3, Array4, Axis};

use crate::data::Tile;
use crate::error::{Error, Result};

/// N aligned image/mask pairs in planar layout.
///
/// Images are N×3×H×W intensities on the 0–255 scale; `masks` and `valid` are
/// N×H×W. `valid` is `false` wherever a pixel carries no label information
/// (tile padding, or frame regions exposed by rotation and scaling).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub images: Array4<f64>,
    pub masks: Array3<bool>,
    pub valid: Array3<bool>,
    pub ids: Vec<String>,
}

impl SampleBatch {
    pub fn new(images: Array4<f64>, masks: Array3<bool>, valid: Array3<bool>, ids: Vec<String>) -> Result<Self> {
        let (n, _, h, w) = images.dim();
        if masks.dim() != (n, h, w) || valid.dim() != (n, h, w) || ids.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "images {:?}, masks {:?}, valid {:?}, {} ids",
                images.dim(),
                masks.dim(),
                valid.dim(),
                ids.len()
            )));
        }
        Ok(SampleBatch { images, masks, valid, ids })
    }

    pub fn empty(channels: usize, h: usize, w: usize) -> Self {
        SampleBatch {
            images: Array4::zeros((0, channels, h, w)),
            masks: Array3::from_elem((0, h, w), false),
            valid: Array3::from_elem((0, h, w), true),
            ids: Vec::new(),
        }
    }

    /// Stacks tiles of identical size.
    pub fn from_tiles<'a>(tiles: impl IntoIterator<Item = &'a Tile>) -> Result<Self> {
        let tiles: Vec<&Tile> = tiles.into_iter().collect();
        let Some(first) = tiles.first() else {
            return Ok(SampleBatch::empty(3, 0, 0));
        };
        let (h, w) = (first.height(), first.width());
        let n = tiles.len();
        let mut images = Array4::zeros((n, 3, h, w));
        let mut masks = Array3::from_elem((n, h, w), false);
        let mut valid = Array3::from_elem((n, h, w), true);
        for (i, t) in tiles.iter().enumerate() {
            if (t.height(), t.width()) != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "tile {} is {}x{}, expected {h}x{w}",
                    t.id,
                    t.height(),
                    t.width()
                )));
            }
            let planar = t.image.view().permuted_axes([2, 0, 1]);
            images.index_axis_mut(Axis(0), i).assign(&planar.mapv(f64::from));
            masks.index_axis_mut(Axis(0), i).assign(&t.mask);
            valid.index_axis_mut(Axis(0), i).assign(&t.valid);
        }
        Ok(SampleBatch {
            images,
            masks,
            valid,
            ids: tiles.iter().map(|t| t.id.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.images.dim().2
    }

    pub fn width(&self) -> usize {
        self.images.dim().3
    }

    /// Samples in the given order.
    pub fn select(&self, order: &[usize]) -> Self {
        SampleBatch {
            images: self.images.select(Axis(0), order),
            masks: self.masks.select(Axis(0), order),
            valid: self.valid.select(Axis(0), order),
            ids: order.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    /// Image `i` as H×W×3 bytes, rounding and clamping to 0–255.
    pub fn image_u8(&self, i: usize) -> ndarray::Array3<u8> {
        self.images
            .index_axis(Axis(0), i)
            .permuted_axes([1, 2, 0])
            .mapv(|v| v.round().clamp(0.0, 255.0) as u8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn from_tiles_is_planar_and_lossless() {
        let image = ndarray::Array3::from_shape_fn((3, 4, 3), |(r, c, k)| (r * 40 + c * 10 + k) as u8);
        let mask = Array2::from_shape_fn((3, 4), |(r, c)| r == c);
        let tile = Tile::new("A_00001", "A", image.clone(), mask.clone()).unwrap();
        let batch = SampleBatch::from_tiles([&tile, &tile]).unwrap();
        assert_eq!(batch.images.dim(), (2, 3, 3, 4));
        assert_eq!(batch.images[[1, 2, 1, 3]], image[[1, 3, 2]] as f64);
        assert_eq!(batch.image_u8(1), image);
        assert_eq!(batch.masks.index_axis(Axis(0), 0), mask);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = Tile::new("A_1", "A", ndarray::Array3::zeros((2, 2, 3)), Array2::from_elem((2, 2), false)).unwrap();
        let b = Tile::new("A_2", "A", ndarray::Array3::zeros((3, 2, 3)), Array2::from_elem((3, 2), false)).unwrap();
        assert!(SampleBatch::from_tiles([&a, &b]).is_err());
        assert!(SampleBatch::new(Array4::zeros((1, 3, 2, 2)), Array3::from_elem((2, 2, 2), false), Array3::from_elem((1, 2, 2), true), vec!["x".into()]).is_err());
    }
}
