use ndarray::{Array3, Array4};

use crate::error::{Error, Result};
use crate::model::{PredictionPyramid, NUM_SCALES, SCALE_FACTORS};

/// Weights of the 1/16, 1/8, 1/4, 1/2 and 1/1 losses.
pub const SCALE_WEIGHTS: [f64; NUM_SCALES] = [0.25, 0.25, 0.25, 0.25, 0.5];

fn check_labels(scores: &Array4<f64>, labels: &Array3<usize>, valid: &Array3<bool>) -> Result<()> {
    let (n, c, h, w) = scores.dim();
    if labels.dim() != (n, h, w) || valid.dim() != (n, h, w) {
        return Err(Error::ShapeMismatch(format!(
            "scores {:?} vs labels {:?} / valid {:?}",
            scores.dim(),
            labels.dim(),
            valid.dim()
        )));
    }
    if let Some(bad) = labels.iter().zip(valid).find(|(&l, &v)| v && l >= c) {
        return Err(Error::InvalidArgument(format!("label {} outside 0..{c}", bad.0)));
    }
    Ok(())
}

/// Cross-entropy averaged over the valid pixels of each image, then over
/// the images that have any valid pixel. Returns the loss and its gradient
/// with respect to the logits.
pub fn pixel_ce_loss_with_grad(
    scores: &Array4<f64>,
    labels: &Array3<usize>,
    valid: &Array3<bool>,
) -> Result<(f64, Array4<f64>)> {
    check_labels(scores, labels, valid)?;
    let (n, c, h, w) = scores.dim();
    let mut grad = Array4::zeros((n, c, h, w));
    let counts: Vec<usize> = (0..n)
        .map(|b| valid.index_axis(ndarray::Axis(0), b).iter().filter(|&&v| v).count())
        .collect();
    let images = counts.iter().filter(|&&k| k > 0).count();
    if images == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    let mut probs = vec![0.0; c];
    for b in 0..n {
        if counts[b] == 0 {
            continue;
        }
        let scale = 1.0 / (counts[b] * images) as f64;
        let mut image_loss = 0.0;
        for y in 0..h {
            for x in 0..w {
                if !valid[[b, y, x]] {
                    continue;
                }
                let max = (0..c).map(|k| scores[[b, k, y, x]]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (k, p) in probs.iter_mut().enumerate() {
                    *p = (scores[[b, k, y, x]] - max).exp();
                    z += *p;
                }
                let target = labels[[b, y, x]];
                image_loss += z.ln() + max - scores[[b, target, y, x]];
                for (k, p) in probs.iter().enumerate() {
                    let onehot = if k == target { 1.0 } else { 0.0 };
                    grad[[b, k, y, x]] = (p / z - onehot) * scale;
                }
            }
        }
        total += image_loss / counts[b] as f64;
    }
    Ok((total / images as f64, grad))
}

/// Loss value of [`pixel_ce_loss_with_grad`].
pub fn pixel_ce_loss(scores: &Array4<f64>, labels: &Array3<usize>, valid: &Array3<bool>) -> Result<f64> {
    pixel_ce_loss_with_grad(scores, labels, valid).map(|(l, _)| l)
}

/// `0.25 * (L1 + L2 + L3 + L4) + 0.5 * L5` for the default weights.
pub fn weighted_scale_sum(losses: &[f64; NUM_SCALES], weights: &[f64; NUM_SCALES]) -> f64 {
    losses.iter().zip(weights).map(|(l, w)| l * w).sum()
}

/// Nearest-neighbour label downsampling by an integer factor, sampling the
/// pixel at the centre of each `factor`×`factor` block.
pub fn downsample_labels(labels: &Array3<usize>, valid: &Array3<bool>, factor: usize) -> (Array3<usize>, Array3<bool>) {
    if factor == 1 {
        return (labels.clone(), valid.clone());
    }
    let (n, h, w) = labels.dim();
    let off = factor / 2;
    let shape = (n, h / factor, w / factor);
    (
        Array3::from_shape_fn(shape, |(b, y, x)| labels[[b, y * factor + off, x * factor + off]]),
        Array3::from_shape_fn(shape, |(b, y, x)| valid[[b, y * factor + off, x * factor + off]]),
    )
}

#[derive(Debug, Clone)]
pub struct MultiscaleLoss {
    pub total: f64,
    /// Coarsest first.
    pub per_scale: [f64; NUM_SCALES],
    /// Gradient of `total` with respect to each pyramid level.
    pub grads: Vec<Array4<f64>>,
}

/// Deep-supervision loss: each level is compared with nearest-downsampled
/// full-resolution labels and the per-level losses are combined with `weights`.
pub fn multiscale_loss(
    pyramid: &PredictionPyramid,
    labels: &Array3<usize>,
    valid: &Array3<bool>,
    weights: &[f64; NUM_SCALES],
) -> Result<MultiscaleLoss> {
    if pyramid.maps.len() != NUM_SCALES {
        return Err(Error::ShapeMismatch(format!(
            "pyramid has {} levels, expected {NUM_SCALES}",
            pyramid.maps.len()
        )));
    }
    let (_, h, w) = labels.dim();
    let mut per_scale = [0.0; NUM_SCALES];
    let mut grads = Vec::with_capacity(NUM_SCALES);
    for (i, map) in pyramid.maps.iter().enumerate() {
        let factor = SCALE_FACTORS[i];
        let (_, _, mh, mw) = map.dim();
        if mh * factor != h || mw * factor != w {
            return Err(Error::ShapeMismatch(format!(
                "level {i} is {mh}x{mw}, labels are {h}x{w} (factor {factor})"
            )));
        }
        let (l, v) = downsample_labels(labels, valid, factor);
        let (loss, mut grad) = pixel_ce_loss_with_grad(map, &l, &v)?;
        per_scale[i] = loss;
        grad *= weights[i];
        grads.push(grad);
    }
    Ok(MultiscaleLoss {
        total: weighted_scale_sum(&per_scale, weights),
        per_scale,
        grads,
    })
}
