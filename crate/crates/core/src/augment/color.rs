use ndarray::{Array2, Array3, ArrayView3, ArrayViewMut3, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::AugmentationConfig;
use crate::batch::SampleBatch;

const MAX_INTENSITY: f64 = 255.0;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// One sample's color draw. `None` means the operation did not fire.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ColorParams {
    pub brightness: Option<f64>,
    pub color_balance: Option<f64>,
    pub contrast: Option<f64>,
    pub sharpness: Option<f64>,
    pub blur_sigma: Option<f64>,
}

fn maybe(rng: &mut impl Rng, p: f64, range: [f64; 2]) -> Option<f64> {
    rng.random_bool(p).then(|| rng.random_range(range[0]..=range[1]))
}

fn draw_params(cfg: &AugmentationConfig, rng: &mut impl Rng) -> ColorParams {
    ColorParams {
        brightness: maybe(rng, cfg.p_brightness, cfg.brightness_range),
        color_balance: maybe(rng, cfg.p_color_balance, cfg.color_balance_range),
        contrast: maybe(rng, cfg.p_contrast, cfg.contrast_range),
        sharpness: maybe(rng, cfg.p_sharpness, cfg.sharpness_range),
        blur_sigma: maybe(rng, cfg.p_blur, cfg.blur_sigma_range),
    }
}

fn luma(image: ArrayView3<f64>) -> Array2<f64> {
    let (_, h, w) = image.dim();
    let mut out = Array2::zeros((h, w));
    for (c, weight) in LUMA.iter().enumerate() {
        out.scaled_add(*weight, &image.index_axis(Axis(0), c));
    }
    out
}

/// `(1 - f) * base + f * image`, clamped. `f = 1` returns `image` bit-exactly.
fn blend_into(mut image: ArrayViewMut3<f64>, base: impl Fn(usize, usize, usize) -> f64, f: f64) {
    for ((c, y, x), v) in image.indexed_iter_mut() {
        *v = ((1.0 - f) * base(c, y, x) + f * *v).clamp(0.0, MAX_INTENSITY);
    }
}

/// 3×3 smoothing with centre weight 5, leaving the one-pixel border as is.
fn smooth3(image: ArrayView3<f64>) -> Array3<f64> {
    let (ch, h, w) = image.dim();
    let mut out = image.to_owned();
    if h < 3 || w < 3 {
        return out;
    }
    for c in 0..ch {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut acc = 4.0 * image[[c, y, x]];
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += image[[c, y + dy - 1, x + dx - 1]];
                    }
                }
                out[[c, y, x]] = acc / 13.0;
            }
        }
    }
    out
}

/// Mirrors an out-of-range index back into `0..n` without repeating the edge.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflective borders, per channel.
pub fn gaussian_blur(image: ArrayView3<f64>, sigma: f64) -> Array3<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (ch, h, w) = image.dim();
    let mut tmp = Array3::<f64>::zeros((ch, h, w));
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                tmp[[c, y, x]] = kernel
                    .iter()
                    .zip(-radius..=radius)
                    .map(|(k, d)| k * image[[c, y, reflect(x as isize + d, w)]])
                    .sum();
            }
        }
    }
    let mut out = Array3::<f64>::zeros((ch, h, w));
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                out[[c, y, x]] = kernel
                    .iter()
                    .zip(-radius..=radius)
                    .map(|(k, d)| k * tmp[[c, reflect(y as isize + d, h), x]])
                    .sum();
            }
        }
    }
    out
}

/// Applies a recorded color draw to one C×H×W image in place.
///
/// Operations run in the order brightness, color balance, contrast,
/// sharpness, blur, each clamping to the valid intensity range.
pub fn color_sample(mut image: ArrayViewMut3<f64>, p: &ColorParams) {
    if let Some(f) = p.brightness {
        blend_into(image.view_mut(), |_, _, _| 0.0, f);
    }
    if let Some(f) = p.color_balance {
        if image.dim().0 == 3 {
            let gray = luma(image.view());
            blend_into(image.view_mut(), |_, y, x| gray[[y, x]], f);
        }
    }
    if let Some(f) = p.contrast {
        let mean = luma(image.view()).mean().unwrap_or(0.0);
        blend_into(image.view_mut(), |_, _, _| mean, f);
    }
    if let Some(f) = p.sharpness {
        let smooth = smooth3(image.view());
        blend_into(image.view_mut(), |c, y, x| smooth[[c, y, x]], f);
    }
    if let Some(sigma) = p.blur_sigma {
        let blurred = gaussian_blur(image.view(), sigma);
        Zip::from(&mut image)
            .and(&blurred)
            .for_each(|v, &b| *v = b.clamp(0.0, MAX_INTENSITY));
    }
}

/// Runs the CA operation menu on every image. Masks and validity are untouched.
pub fn apply_color(batch: &SampleBatch, cfg: &AugmentationConfig, rng: &mut impl Rng) -> (SampleBatch, Vec<ColorParams>) {
    let params: Vec<ColorParams> = (0..batch.len()).map(|_| draw_params(cfg, rng)).collect();
    let mut out = batch.clone();
    for (i, p) in params.iter().enumerate() {
        color_sample(out.images.index_axis_mut(Axis(0), i), p);
    }
    (out, params)
}
