use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array4, Ix1, Ix4};

use super::{FeatureTensor, Layout};
use crate::error::{Error, Result};
use crate::nn::ops::{conv2d, maxpool2, relu, upsample_nearest2};
use crate::nn::{Archive, Padding};

/// Archive metadata key holding the layer list.
pub const TOPOLOGY_KEY: &str = "topology";

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        weight: Array4<f64>,
        bias: Array1<f64>,
        relu: bool,
        padding: Padding,
    },
    MaxPool,
    Upsample,
    Scale(f64),
}

impl Layer {
    fn apply(&self, x: &Array4<f64>) -> Array4<f64> {
        match self {
            Layer::Conv {
                weight,
                bias,
                relu: act,
                padding,
            } => {
                let y = conv2d(x.view(), weight.view(), bias.view(), *padding);
                if *act {
                    relu(&y)
                } else {
                    y
                }
            }
            Layer::MaxPool => maxpool2(x),
            Layer::Upsample => upsample_nearest2(x),
            Layer::Scale(f) => x * *f,
        }
    }
}

/// Convolutional style encoder and decoder.
///
/// The archive's `topology` metadata lists one layer per line:
///
/// ```text
/// encoder scale 0.00392156862745098
/// encoder conv 3 16 3 relu reflect
/// encoder maxpool
/// decoder upsample
/// decoder conv 16 3 3 none reflect
/// decoder scale 255
/// ```
///
/// A conv line is `<section> conv <in> <out> <kernel> <relu|none> [zero|reflect]`
/// and takes its arrays from `<section>.<line index within section>.weight`
/// (out×in×k×k) and `.bias` (out). Encoder input and decoder output are
/// 0–255 intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTransform {
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
}

fn parse_conv(fields: &[&str], archive: &Archive, prefix: &str) -> Result<Layer> {
    let bad = |m: String| Error::Weights(format!("{prefix}: {m}"));
    if !(4..=5).contains(&fields.len()) {
        return Err(bad(format!("conv needs <in> <out> <kernel> <activation> [padding], got {fields:?}")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer {s:?}")));
    let (cin, cout, k) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);
    if k % 2 == 0 {
        return Err(bad(format!("kernel {k} must be odd")));
    }
    let relu = match fields[3] {
        "relu" => true,
        "none" => false,
        other => return Err(bad(format!("unknown activation {other:?}"))),
    };
    let padding = match fields.get(4).copied().unwrap_or("zero") {
        "zero" => Padding::Zero,
        "reflect" => Padding::Reflect,
        other => return Err(bad(format!("unknown padding {other:?}"))),
    };
    let fetch = |suffix: &str| {
        archive
            .get(&format!("{prefix}.{suffix}"))
            .ok_or_else(|| bad(format!("missing array {prefix}.{suffix}")))
    };
    let weight = fetch("weight")?
        .clone()
        .into_dimensionality::<Ix4>()
        .map_err(|_| bad("weight must be 4-d".into()))?;
    let bias = fetch("bias")?
        .clone()
        .into_dimensionality::<Ix1>()
        .map_err(|_| bad("bias must be 1-d".into()))?;
    if weight.dim() != (cout, cin, k, k) || bias.len() != cout {
        return Err(bad(format!(
            "arrays {:?}/{} do not match {cin}->{cout} k{k}",
            weight.dim(),
            bias.len()
        )));
    }
    Ok(Layer::Conv {
        weight,
        bias,
        relu,
        padding,
    })
}

impl ConvTransform {
    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let topology = archive
            .metadata
            .get(TOPOLOGY_KEY)
            .ok_or_else(|| Error::Weights(format!("archive lacks `{TOPOLOGY_KEY}` metadata")))?;
        let mut encoder = Vec::new();
        let mut decoder = Vec::new();
        for line in topology.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let (section, list) = match fields[0] {
                "encoder" => ("encoder", &mut encoder),
                "decoder" => ("decoder", &mut decoder),
                other => return Err(Error::Weights(format!("unknown section {other:?} in {line:?}"))),
            };
            let prefix = format!("{section}.{}", list.len());
            let layer = match fields.get(1).copied() {
                Some("conv") => parse_conv(&fields[2..], archive, &prefix)?,
                Some("maxpool") => Layer::MaxPool,
                Some("upsample") => Layer::Upsample,
                Some("scale") => Layer::Scale(
                    fields
                        .get(2)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Weights(format!("bad scale line {line:?}")))?,
                ),
                _ => return Err(Error::Weights(format!("unknown layer in {line:?}"))),
            };
            list.push(layer);
        }
        if encoder.is_empty() || decoder.is_empty() {
            return Err(Error::Weights("topology needs encoder and decoder layers".into()));
        }
        Ok(ConvTransform { encoder, decoder })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }

    fn pools(&self) -> usize {
        self.encoder.iter().filter(|l| matches!(l, Layer::MaxPool)).count()
    }

    pub fn encode(&self, images: &Array4<f64>) -> Result<FeatureTensor> {
        let (_, c, h, w) = images.dim();
        let m = 1 << self.pools();
        if h % m != 0 || w % m != 0 {
            return Err(Error::ShapeMismatch(format!("{h}x{w} input not divisible by {m}")));
        }
        let mut x = images.clone();
        for layer in &self.encoder {
            if let Layer::Conv { weight, .. } = layer {
                if weight.dim().1 != x.dim().1 {
                    return Err(Error::ShapeMismatch(format!(
                        "encoder conv expects {} channels, got {} (input had {c})",
                        weight.dim().1,
                        x.dim().1
                    )));
                }
            }
            x = layer.apply(&x);
        }
        FeatureTensor::new(x, Layout::Encoded)
    }

    pub fn decode(&self, f: &FeatureTensor) -> Array4<f64> {
        let mut x = f.data.clone();
        for layer in &self.decoder {
            x = layer.apply(&x);
        }
        x
    }
}

/// Maps images to the space where statistics are exchanged and back.
#[derive(Debug, Clone)]
pub enum FeatureTransform {
    Pixel,
    Conv(Arc<ConvTransform>),
}

impl FeatureTransform {
    pub fn encode(&self, images: &Array4<f64>) -> Result<FeatureTensor> {
        match self {
            FeatureTransform::Pixel => FeatureTensor::pixels(images.clone()),
            FeatureTransform::Conv(t) => t.encode(images),
        }
    }

    /// Decodes to images of `shape`, clamped to 0–255.
    pub fn decode(&self, f: &FeatureTensor, shape: (usize, usize, usize, usize)) -> Result<Array4<f64>> {
        let mut out = match self {
            FeatureTransform::Pixel => f.data.clone(),
            FeatureTransform::Conv(t) => t.decode(f),
        };
        if out.dim() != shape {
            return Err(Error::ShapeMismatch(format!(
                "decoder produced {:?}, expected {shape:?}",
                out.dim()
            )));
        }
        out.mapv_inplace(|v| v.clamp(0.0, 255.0));
        Ok(out)
    }
}
