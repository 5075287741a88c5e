use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{AugmentationConfig, Interpolation};
use crate::batch::SampleBatch;
use crate::error::{Error, Result};

/// One sample's geometric draw.
///
/// The forward map applies the flips, then rotates by `angle_deg` and scales
/// by `scale` about the frame centre; the result is cropped or filled back to
/// the original frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricParams {
    pub hflip: bool,
    pub vflip: bool,
    pub angle_deg: f64,
    pub scale: f64,
}

impl Default for GeometricParams {
    fn default() -> Self {
        GeometricParams {
            hflip: false,
            vflip: false,
            angle_deg: 0.0,
            scale: 1.0,
        }
    }
}

impl GeometricParams {
    pub fn is_identity(&self) -> bool {
        !self.hflip && !self.vflip && self.angle_deg == 0.0 && self.scale == 1.0
    }

    fn is_flip_only(&self) -> bool {
        self.angle_deg == 0.0 && self.scale == 1.0
    }

    /// Where source pixel `(y, x)` of an `h`×`w` frame lands.
    pub fn forward(&self, y: f64, x: f64, h: usize, w: usize) -> (f64, f64) {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let x = if self.hflip { w as f64 - 1.0 - x } else { x };
        let y = if self.vflip { h as f64 - 1.0 - y } else { y };
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let (dy, dx) = (y - cy, x - cx);
        (
            cy + self.scale * (sin * dx + cos * dy),
            cx + self.scale * (cos * dx - sin * dy),
        )
    }

    /// Source coordinate sampled by output pixel `(y, x)`.
    pub fn inverse(&self, y: f64, x: f64, h: usize, w: usize) -> (f64, f64) {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let (dy, dx) = ((y - cy) / self.scale, (x - cx) / self.scale);
        let sx = cx + cos * dx + sin * dy;
        let sy = cy - sin * dx + cos * dy;
        let sx = if self.hflip { w as f64 - 1.0 - sx } else { sx };
        let sy = if self.vflip { h as f64 - 1.0 - sy } else { sy };
        (sy, sx)
    }
}

fn draw_params(cfg: &AugmentationConfig, rng: &mut impl Rng) -> GeometricParams {
    let hflip = rng.random_bool(cfg.p_hflip);
    let vflip = rng.random_bool(cfg.p_vflip);
    let angle_deg = if rng.random_bool(cfg.p_rotate) {
        rng.random_range(-cfg.rotation_bound_deg..=cfg.rotation_bound_deg)
    } else {
        0.0
    };
    let scale = if rng.random_bool(cfg.p_scale) {
        rng.random_range(cfg.scale_range[0]..=cfg.scale_range[1])
    } else {
        1.0
    };
    GeometricParams {
        hflip,
        vflip,
        angle_deg,
        scale,
    }
}

fn nearest_index(v: f64, n: usize) -> Option<usize> {
    let i = (v + 0.5).floor();
    (i >= 0.0 && i < n as f64).then_some(i as usize)
}

fn bilinear(plane: ArrayView2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = plane.dim();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = plane[[y0, x0]] * (1.0 - fx) + plane[[y0, x1]] * fx;
    let bottom = plane[[y1, x0]] * (1.0 - fx) + plane[[y1, x1]] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Warps one sample. `image` is C×H×W; pixels mapped from outside the frame
/// become 0 / background / invalid.
fn warp(
    image: Option<ArrayView3<f64>>,
    mask: ArrayView2<bool>,
    valid: ArrayView2<bool>,
    p: &GeometricParams,
    interp: Interpolation,
) -> (Option<Array3<f64>>, Array2<bool>, Array2<bool>) {
    let (h, w) = mask.dim();
    if p.is_identity() {
        return (image.map(|v| v.to_owned()), mask.to_owned(), valid.to_owned());
    }
    if p.is_flip_only() {
        let (ys, xs) = (
            if p.vflip { -1 } else { 1 },
            if p.hflip { -1 } else { 1 },
        );
        return (
            image.map(|v| v.slice(s![.., ..;ys, ..;xs]).to_owned()),
            mask.slice(s![..;ys, ..;xs]).to_owned(),
            valid.slice(s![..;ys, ..;xs]).to_owned(),
        );
    }
    let mut out_image = image.map(|v| Array3::zeros(v.dim()));
    let mut out_mask = Array2::from_elem((h, w), false);
    let mut out_valid = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = p.inverse(y as f64, x as f64, h, w);
            let (Some(iy), Some(ix)) = (nearest_index(sy, h), nearest_index(sx, w)) else {
                continue;
            };
            out_mask[[y, x]] = mask[[iy, ix]];
            out_valid[[y, x]] = valid[[iy, ix]];
            if let (Some(src), Some(dst)) = (image.as_ref(), out_image.as_mut()) {
                for c in 0..src.dim().0 {
                    dst[[c, y, x]] = match interp {
                        Interpolation::Nearest => src[[c, iy, ix]],
                        Interpolation::Bilinear => bilinear(src.index_axis(Axis(0), c), sy, sx),
                    };
                }
            }
        }
    }
    (out_image, out_mask, out_valid)
}

/// Runs the GA operation menu on every sample, each with its own draw.
///
/// Returns the transformed batch and the per-sample parameters that were
/// applied, so the label transform can be replayed.
pub fn apply_geometric(
    batch: &SampleBatch,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> (SampleBatch, Vec<GeometricParams>) {
    let params: Vec<GeometricParams> = (0..batch.len()).map(|_| draw_params(cfg, rng)).collect();
    let mut out = batch.clone();
    for (i, p) in params.iter().enumerate() {
        let (img, mask, valid) = warp(
            Some(batch.images.index_axis(Axis(0), i)),
            batch.masks.index_axis(Axis(0), i),
            batch.valid.index_axis(Axis(0), i),
            p,
            cfg.image_interpolation,
        );
        out.images.index_axis_mut(Axis(0), i).assign(&img.expect("image was supplied"));
        out.masks.index_axis_mut(Axis(0), i).assign(&mask);
        out.valid.index_axis_mut(Axis(0), i).assign(&valid);
    }
    (out, params)
}

/// Applies recorded parameters to labels alone.
pub fn replay_geometric(masks: &Array3<bool>, valid: &Array3<bool>, params: &[GeometricParams]) -> (Array3<bool>, Array3<bool>) {
    let mut out_m = masks.clone();
    let mut out_v = valid.clone();
    for (i, p) in params.iter().enumerate() {
        let (_, m, v) = warp(
            None,
            masks.index_axis(Axis(0), i),
            valid.index_axis(Axis(0), i),
            p,
            Interpolation::Nearest,
        );
        out_m.index_axis_mut(Axis(0), i).assign(&m);
        out_v.index_axis_mut(Axis(0), i).assign(&v);
    }
    (out_m, out_v)
}

/// Rescales one C×H×W image and its mask by `s` about the centre, then
/// crops (`s > 1`) or zero/background-fills (`s < 1`) to the original size.
///
/// `s` must be positive and lie within `range`. The returned validity map is
/// `false` on filled pixels.
pub fn scale_then_fit(
    image: ArrayView3<f64>,
    mask: ArrayView2<bool>,
    s: f64,
    range: [f64; 2],
) -> Result<(Array3<f64>, Array2<bool>, Array2<bool>)> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("scale factor {s} must be positive")));
    }
    if s < range[0] || s > range[1] {
        return Err(Error::InvalidArgument(format!("scale factor {s} outside {range:?}")));
    }
    let p = GeometricParams {
        scale: s,
        ..Default::default()
    };
    let valid = Array2::from_elem(mask.dim(), true);
    let (img, m, v) = warp(Some(image), mask, valid.view(), &p, Interpolation::Bilinear);
    Ok((img.expect("image was supplied"), m, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::DEFAULT_SCALE_RANGE;
    use crate::rng::{stream, Purpose};
    use ndarray::{Array3, Array4};
    use proptest::prelude::*;

    fn batch(n: usize, h: usize, w: usize) -> SampleBatch {
        let images = Array4::from_shape_fn((n, 3, h, w), |(i, c, y, x)| ((i * 13 + c * 50 + y * 7 + x * 3) % 256) as f64);
        let masks = Array3::from_shape_fn((n, h, w), |(i, y, x)| (y + i) % 5 < 2 && x % 4 != 1);
        SampleBatch::new(images, masks, Array3::from_elem((n, h, w), true), (0..n).map(|i| i.to_string()).collect()).unwrap()
    }

    #[test]
    fn double_hflip_is_identity() {
        let b = batch(2, 6, 9);
        let p = GeometricParams {
            hflip: true,
            ..Default::default()
        };
        let (once_m, once_v) = replay_geometric(&b.masks, &b.valid, &[p, p]);
        assert_ne!(once_m, b.masks);
        let (twice, _) = replay_geometric(&once_m, &once_v, &[p, p]);
        assert_eq!(twice, b.masks);
    }

    #[test]
    fn unit_scale_no_rotation_is_identity() {
        let b = batch(3, 8, 8);
        let cfg = AugmentationConfig {
            p_hflip: 0.0,
            p_vflip: 0.0,
            p_rotate: 0.0,
            p_scale: 1.0,
            scale_range: [1.0, 1.0],
            ..Default::default()
        };
        let (out, params) = apply_geometric(&b, &cfg, &mut stream(1, Purpose::Augment, 0));
        assert!(params.iter().all(|p| p.scale == 1.0));
        assert_eq!(out, b);
    }

    #[test]
    fn zero_probabilities_give_identity() {
        let b = batch(4, 10, 7);
        let cfg = AugmentationConfig::default().with_op_probability(0.0);
        let (out, _) = apply_geometric(&b, &cfg, &mut stream(5, Purpose::Augment, 0));
        assert_eq!(out, b);
    }

    #[test]
    fn empty_batch_stays_empty() {
        let b = SampleBatch::empty(3, 4, 4);
        let (out, params) = apply_geometric(&b, &AugmentationConfig::default(), &mut stream(0, Purpose::Augment, 0));
        assert!(out.is_empty() && params.is_empty());
    }

    #[test]
    fn scale_two_maps_marked_pixel_to_crop_origin() {
        let n = 512;
        let mut mask = Array2::from_elem((n, n), false);
        mask[[128, 128]] = true;
        let image = Array3::zeros((3, n, n));
        let (_, out, _) = scale_then_fit(image.view(), mask.view(), 2.0, DEFAULT_SCALE_RANGE).unwrap();
        let p = GeometricParams {
            scale: 2.0,
            ..Default::default()
        };
        let (fy, fx) = p.forward(128.0, 128.0, n, n);
        assert!((fy - 0.5).abs() < 1e-12 && (fx - 0.5).abs() < 1e-12);
        assert!(out[[0, 0]]);
        let marked: Vec<(usize, usize)> = out.indexed_iter().filter(|(_, &b)| b).map(|(ix, _)| ix).collect();
        assert!(marked.iter().all(|&(y, x)| (y as f64 - fy).abs() <= 1.0 && (x as f64 - fx).abs() <= 1.0));
    }

    #[test]
    fn half_scale_centres_content_and_pads() {
        let n = 512;
        let mask = Array2::from_elem((n, n), true);
        let image = Array3::from_elem((3, n, n), 100.0);
        let (img, out, valid) = scale_then_fit(image.view(), mask.view(), 0.5, DEFAULT_SCALE_RANGE).unwrap();
        let count = out.iter().filter(|&&b| b).count();
        assert_eq!(count, 256 * 256);
        assert!(out[[n / 2, n / 2]] && !out[[0, 0]] && !out[[n - 1, n - 1]]);
        assert_eq!(valid, out);
        assert_eq!(img[[0, 10, 10]], 0.0);
        assert_eq!(img[[1, n / 2, n / 2]], 100.0);
    }

    #[test]
    fn half_scale_quarters_building_pixels() {
        let n = 64;
        let mask = Array2::from_shape_fn((n, n), |(y, x)| (8..40).contains(&y) && (20..52).contains(&x));
        let before = mask.iter().filter(|&&b| b).count() as f64;
        let image = Array3::zeros((3, n, n));
        let (_, out, _) = scale_then_fit(image.view(), mask.view(), 0.5, DEFAULT_SCALE_RANGE).unwrap();
        let after = out.iter().filter(|&&b| b).count() as f64;
        // Nearest-neighbour rounding may shift each edge of the 16x16 result by one pixel.
        assert!((after - before / 4.0).abs() <= 2.0 * 17.0, "{after} vs {}", before / 4.0);
    }

    #[test]
    fn scale_bounds_enforced() {
        let mask = Array2::from_elem((8, 8), false);
        let image = Array3::zeros((3, 8, 8));
        assert!(scale_then_fit(image.view(), mask.view(), 0.5, DEFAULT_SCALE_RANGE).is_ok());
        assert!(scale_then_fit(image.view(), mask.view(), 2.0, DEFAULT_SCALE_RANGE).is_ok());
        assert!(scale_then_fit(image.view(), mask.view(), 2.5, DEFAULT_SCALE_RANGE).is_err());
        assert!(scale_then_fit(image.view(), mask.view(), 0.0, [0.0, 10.0]).is_err());
        assert!(scale_then_fit(image.view(), mask.view(), 1.0, DEFAULT_SCALE_RANGE).map(|r| r.1 == mask).unwrap());
    }

    #[test]
    fn replay_matches_applied_labels() {
        let b = batch(6, 20, 20);
        let (out, params) = apply_geometric(&b, &AugmentationConfig::default(), &mut stream(9, Purpose::Augment, 2));
        let (m, v) = replay_geometric(&b.masks, &b.valid, &params);
        assert_eq!(m, out.masks);
        assert_eq!(v, out.valid);
    }

    #[test]
    fn forward_and_inverse_agree() {
        let p = GeometricParams {
            hflip: true,
            vflip: false,
            angle_deg: 17.0,
            scale: 1.3,
        };
        let (y, x) = p.forward(3.0, 11.0, 20, 30);
        let (by, bx) = p.inverse(y, x, 20, 30);
        assert!((by - 3.0).abs() < 1e-9 && (bx - 11.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn flips_map_pixels_exactly(h in 1usize..12, w in 1usize..12, hf in any::<bool>(), vf in any::<bool>()) {
            let b = batch(1, h, w);
            let p = GeometricParams { hflip: hf, vflip: vf, ..Default::default() };
            let (m, _) = replay_geometric(&b.masks, &b.valid, &[p]);
            for y in 0..h {
                for x in 0..w {
                    let (fy, fx) = p.forward(y as f64, x as f64, h, w);
                    prop_assert_eq!(m[[0, fy as usize, fx as usize]], b.masks[[0, y, x]]);
                }
            }
        }

        #[test]
        fn shapes_preserved(seed in any::<u64>()) {
            let b = batch(3, 9, 13);
            let (out, params) = apply_geometric(&b, &AugmentationConfig::default(), &mut stream(seed, Purpose::Augment, 0));
            prop_assert_eq!(out.images.dim(), b.images.dim());
            prop_assert_eq!(out.masks.dim(), b.masks.dim());
            prop_assert_eq!(params.len(), 3);
            for p in params {
                prop_assert!(p.angle_deg.abs() <= 30.0);
                prop_assert!((0.5..=2.0).contains(&p.scale));
            }
        }
    }
}
