//! Style mixing: each sample in a batch borrows the channel statistics of
//! another sample (AdaIN), and the result is interpolated with the original.

mod transform;

use ndarray::{Array2, Array4, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

pub use transform::{ConvTransform, FeatureTransform, Layer, TOPOLOGY_KEY};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Image channels in 0–255 intensity units.
    Pixel,
    /// Activations of a convolutional style encoder.
    Encoded,
}

/// N×C×H×W tensor tagged with the space it lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub data: Array4<f64>,
    pub layout: Layout,
}

impl FeatureTensor {
    pub fn new(data: Array4<f64>, layout: Layout) -> Result<Self> {
        if data.dim().0 == 0 {
            return Err(Error::ShapeMismatch("feature tensor needs at least one sample".into()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("feature tensor holds non-finite values".into()));
        }
        Ok(FeatureTensor { data, layout })
    }

    pub fn pixels(data: Array4<f64>) -> Result<Self> {
        Self::new(data, Layout::Pixel)
    }
}

/// Per-sample, per-channel spatial mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
}

pub fn channel_stats(f: &FeatureTensor) -> ChannelStats {
    let (n, c, h, w) = f.data.dim();
    let count = (h * w) as f64;
    let mut mean = Array2::zeros((n, c));
    let mut std = Array2::zeros((n, c));
    for b in 0..n {
        for k in 0..c {
            let plane = f.data.slice(ndarray::s![b, k, .., ..]);
            let m = plane.sum() / count;
            let var = plane.fold(0.0, |acc, &v| acc + (v - m) * (v - m)) / count;
            mean[[b, k]] = m;
            std[[b, k]] = var.sqrt();
        }
    }
    ChannelStats { mean, std }
}

/// `σ(f_s)·(f_c − μ(f_c))/(σ(f_c)+eps) + μ(f_s)` per sample and channel.
pub fn adain(f_c: &FeatureTensor, f_s: &FeatureTensor, eps: f64) -> Result<FeatureTensor> {
    let (nc, cc, _, _) = f_c.data.dim();
    let (ns, cs, _, _) = f_s.data.dim();
    if (nc, cc) != (ns, cs) || f_c.layout != f_s.layout {
        return Err(Error::ShapeMismatch(format!(
            "content {:?}/{:?} vs style {:?}/{:?}",
            f_c.data.dim(),
            f_c.layout,
            f_s.data.dim(),
            f_s.layout
        )));
    }
    let content = channel_stats(f_c);
    let style = channel_stats(f_s);
    let mut out = f_c.data.clone();
    for b in 0..nc {
        for k in 0..cc {
            let gain = style.std[[b, k]] / (content.std[[b, k]] + eps);
            let (mc, ms) = (content.mean[[b, k]], style.mean[[b, k]]);
            out.slice_mut(ndarray::s![b, k, .., ..])
                .mapv_inplace(|v| gain * (v - mc) + ms);
        }
    }
    Ok(FeatureTensor {
        data: out,
        layout: f_c.layout,
    })
}

/// `alpha·f_cs + (1 − alpha)·f_c`.
pub fn mix_interpolate(f_cs: &FeatureTensor, f_c: &FeatureTensor, alpha: f64) -> Result<FeatureTensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if f_cs.data.dim() != f_c.data.dim() || f_cs.layout != f_c.layout {
        return Err(Error::ShapeMismatch(format!(
            "mixing {:?} with {:?}",
            f_cs.data.dim(),
            f_c.data.dim()
        )));
    }
    let data = if alpha == 0.0 {
        f_c.data.clone()
    } else if alpha == 1.0 {
        f_cs.data.clone()
    } else {
        Zip::from(&f_cs.data)
            .and(&f_c.data)
            .map_collect(|&s, &c| alpha * s + (1.0 - alpha) * c)
    };
    Ok(FeatureTensor {
        data,
        layout: f_c.layout,
    })
}

/// Uniformly random permutation of `0..n`; content sample `i` is styled by
/// sample `perm[i]`. Fixed points are allowed.
pub fn shuffle_batch(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TransformSpec {
    /// AdaIN acts directly on image channels.
    #[default]
    Pixel,
    /// Encoder/decoder loaded from a weight archive.
    Conv { weights: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleMixConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub transform: TransformSpec,
}

impl Default for StyleMixConfig {
    fn default() -> Self {
        StyleMixConfig {
            alpha: 0.5,
            epsilon: 1e-5,
            transform: TransformSpec::Pixel,
        }
    }
}

impl StyleMixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("style mix alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("style mix epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }

    /// Instantiates the configured transform, loading weights when needed.
    pub fn build_transform(&self) -> Result<FeatureTransform> {
        self.validate()?;
        match &self.transform {
            TransformSpec::Pixel => Ok(FeatureTransform::Pixel),
            TransformSpec::Conv { weights } => Ok(FeatureTransform::Conv(ConvTransform::load(weights)?.into())),
        }
    }
}

/// What [`style_mix_batch`] drew, for tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleMixTrace {
    pub permutation: Vec<usize>,
}

/// Re-styles every sample with the statistics of a randomly paired sample of
/// the same batch. Masks and validity maps pass through untouched.
pub fn style_mix_batch(
    batch: &SampleBatch,
    cfg: &StyleMixConfig,
    transform: &FeatureTransform,
    rng: &mut impl Rng,
) -> Result<(SampleBatch, StyleMixTrace)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("style mixing needs a non-empty batch".into()));
    }
    let perm = shuffle_batch(batch.len(), rng);
    let images = mix_with_permutation(&batch.images, &perm, cfg, transform)?;
    let out = SampleBatch {
        images,
        masks: batch.masks.clone(),
        valid: batch.valid.clone(),
        ids: batch.ids.clone(),
    };
    Ok((out, StyleMixTrace { permutation: perm }))
}

/// Style mixing with an explicit pairing.
pub fn mix_with_permutation(
    images: &Array4<f64>,
    perm: &[usize],
    cfg: &StyleMixConfig,
    transform: &FeatureTransform,
) -> Result<Array4<f64>> {
    if perm.len() != images.dim().0 {
        return Err(Error::ShapeMismatch(format!(
            "permutation of {} for a batch of {}",
            perm.len(),
            images.dim().0
        )));
    }
    if cfg.alpha == 0.0 && matches!(transform, FeatureTransform::Pixel) {
        return Ok(images.clone());
    }
    let f_c = transform.encode(images)?;
    let f_s = FeatureTensor {
        data: f_c.data.select(Axis(0), perm),
        layout: f_c.layout,
    };
    let f_cs = adain(&f_c, &f_s, cfg.epsilon)?;
    let f_ccs = mix_interpolate(&f_cs, &f_c, cfg.alpha)?;
    transform.decode(&f_ccs, images.dim())
}
