//! Encoder / attention / decoder segmentation network with five supervised
//! output scales.
//!
//! ```text
//! image ─ enc0 ─ pool ─ enc1 ─ pool ─ enc2 ─ pool ─ enc3 ─ pool ─ enc4 ─ attention ─ d4 ─ head → 1/16
//!          │             │             │             │                                │
//!          └─────────────┼─────────────┼─────────────┴───────── up + cat ── dec3 ─ d3 ─ head → 1/8
//!                        │             └─────────────────────── up + cat ── dec2 ─ d2 ─ head → 1/4
//!                        └───────────────────────────────────── up + cat ── dec1 ─ d1 ─ head → 1/2
//!          └─────────────────────────────────────────────────── up + cat ── dec0 ─ d0 ─ head → 1/1
//! ```
//!
//! Each encoder stage is a stack of 3×3 conv + ReLU; the decoder upsamples
//! bilinearly, concatenates the skip connection, and applies 3×3 conv + ReLU.
//! Heads are independent 1×1 convolutions producing class logits. The network
//! has no train/eval-dependent layers, so inference and training forward
//! passes share every operation.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{
    concat_channels, maxpool2, maxpool2_backward, relu, relu_backward, split_channels, upsample_bilinear,
    upsample_bilinear_backward,
};
use crate::nn::{Archive, AttentionCache, AttentionFusion, Conv2d, Grads, Params};
use crate::rng::{stream, Purpose};

/// Number of encoder stages and supervised output scales.
pub const NUM_SCALES: usize = 5;
/// Downsampling factor of each pyramid level, coarsest first.
pub const SCALE_FACTORS: [usize; NUM_SCALES] = [16, 8, 4, 2, 1];

/// Per-channel normalisation applied to 0–255 inputs before the encoder.
const INPUT_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const INPUT_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMode {
    /// Channel and position attention in parallel, summed.
    #[default]
    ChannelPosition,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegModelConfig {
    /// Output channels of the five encoder stages.
    pub encoder_channels: Vec<usize>,
    /// 3×3 convolutions per encoder stage.
    pub encoder_convs: Vec<usize>,
    /// 3×3 convolutions per decoder stage.
    pub decoder_convs: usize,
    pub num_classes: usize,
    pub attention: AttentionMode,
    /// Hidden width of the channel-attention MLP is `channels / reduction`.
    pub attention_reduction: usize,
    /// Kernel size of the position-attention convolution.
    pub attention_kernel: usize,
    /// Optional archive whose `encoder.*` arrays replace the initial weights.
    pub pretrained: Option<PathBuf>,
    pub init_seed: u64,
}

impl Default for SegModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SegModelConfig {
    /// CPU-friendly default.
    pub fn desk() -> Self {
        SegModelConfig {
            encoder_channels: vec![16, 32, 64, 128, 128],
            encoder_convs: vec![2, 2, 2, 2, 2],
            decoder_convs: 1,
            num_classes: 2,
            attention: AttentionMode::ChannelPosition,
            attention_reduction: 8,
            attention_kernel: 7,
            pretrained: None,
            init_seed: 0,
        }
    }

    /// Smallest configuration; used for gradient checks and quick experiments.
    pub fn tiny() -> Self {
        SegModelConfig {
            encoder_channels: vec![8, 16, 16, 32, 32],
            encoder_convs: vec![1; NUM_SCALES],
            attention_reduction: 4,
            ..Self::desk()
        }
    }

    /// VGG-16 sized encoder (13 convolutions).
    pub fn full() -> Self {
        SegModelConfig {
            encoder_channels: vec![64, 128, 256, 512, 512],
            encoder_convs: vec![2, 2, 3, 3, 3],
            attention_reduction: 16,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() != NUM_SCALES || self.encoder_convs.len() != NUM_SCALES {
            return Err(Error::Config(format!(
                "model needs exactly {NUM_SCALES} encoder stages (channels and conv counts)"
            )));
        }
        if self.encoder_channels.contains(&0) || self.encoder_convs.contains(&0) || self.decoder_convs == 0 {
            return Err(Error::Config("channel and convolution counts must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.attention_kernel % 2 == 0 {
            return Err(Error::Config("attention_kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Class logits at scales 1/16, 1/8, 1/4, 1/2, 1/1 (in that order).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPyramid {
    pub maps: Vec<Array4<f64>>,
}

impl PredictionPyramid {
    pub fn finest(&self) -> &Array4<f64> {
        self.maps.last().expect("pyramid has five maps")
    }
}

/// Activations kept by a training forward pass.
pub struct ForwardCache {
    /// Per encoder stage: `[stage input, conv outputs...]`.
    encoder: Vec<Vec<Array4<f64>>>,
    attention: Option<AttentionCache>,
    /// Per decoder stage (index = stage, 0 finest..3): `[concat input, conv outputs...]`.
    decoder: Vec<Vec<Array4<f64>>>,
    /// Decoder features feeding each head, index = stage (4 = bottleneck).
    features: Vec<Array4<f64>>,
}

#[derive(Debug, Clone)]
pub struct SegModel {
    pub config: SegModelConfig,
    pub params: Params,
    encoder: Vec<Vec<Conv2d>>,
    attention: Option<AttentionFusion>,
    /// Index = target stage 0..4 (stage 4 has no convs).
    decoder: Vec<Vec<Conv2d>>,
    /// Index = stage; head for stage s produces scale 1/2^s.
    heads: Vec<Conv2d>,
}

fn normalize_input(images: &Array4<f64>) -> Array4<f64> {
    let mut x = images / 255.0;
    for (c, mut plane) in x.axis_iter_mut(Axis(1)).enumerate() {
        let (m, s) = (INPUT_MEAN[c % 3], INPUT_STD[c % 3]);
        plane.mapv_inplace(|v| (v - m) / s);
    }
    x
}

impl SegModel {
    pub fn new(config: SegModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.init_seed, Purpose::Init, 0);
        let mut params = Params::default();
        let ch = &config.encoder_channels;

        let mut encoder = Vec::with_capacity(NUM_SCALES);
        let mut cin = 3;
        for s in 0..NUM_SCALES {
            let convs = (0..config.encoder_convs[s])
                .map(|k| {
                    let conv = Conv2d::new(&mut params, &format!("encoder.{s}.{k}"), cin, ch[s], 3, &mut rng);
                    cin = ch[s];
                    conv
                })
                .collect();
            encoder.push(convs);
        }
        let attention = (config.attention == AttentionMode::ChannelPosition).then(|| {
            AttentionFusion::new(
                &mut params,
                "attention",
                ch[4],
                config.attention_reduction,
                config.attention_kernel,
                &mut rng,
            )
        });
        let mut decoder = Vec::with_capacity(NUM_SCALES - 1);
        for s in 0..NUM_SCALES - 1 {
            let mut cin = ch[s + 1] + ch[s];
            let convs = (0..config.decoder_convs)
                .map(|k| {
                    let conv = Conv2d::new(&mut params, &format!("decoder.{s}.{k}"), cin, ch[s], 3, &mut rng);
                    cin = ch[s];
                    conv
                })
                .collect();
            decoder.push(convs);
        }
        let heads = (0..NUM_SCALES)
            .map(|s| Conv2d::new(&mut params, &format!("head.{s}"), ch[s], config.num_classes, 1, &mut rng))
            .collect();

        let mut model = SegModel {
            config,
            params,
            encoder,
            attention,
            decoder,
            heads,
        };
        if let Some(path) = model.config.pretrained.clone() {
            model.load_encoder_weights(&path)?;
        }
        Ok(model)
    }

    /// Copies every `encoder.*` array of matching shape from an archive.
    pub fn load_encoder_weights(&mut self, path: &Path) -> Result<usize> {
        let archive = Archive::load(path)?;
        let mut loaded = 0;
        for (name, arr) in &archive.tensors {
            if !name.starts_with("encoder.") {
                continue;
            }
            let id = self
                .params
                .id(name)
                .ok_or_else(|| Error::Weights(format!("{}: unknown parameter {name}", path.display())))?;
            if self.params.get(id).shape() != arr.shape() {
                return Err(Error::Weights(format!(
                    "{name}: shape {:?} does not match model {:?}",
                    arr.shape(),
                    self.params.get(id).shape()
                )));
            }
            *self.params.get_mut(id) = arr.clone();
            loaded += 1;
        }
        Ok(loaded)
    }

    fn check_input(&self, images: &Array4<f64>) -> Result<()> {
        let (n, c, h, w) = images.dim();
        if c != 3 {
            return Err(Error::ShapeMismatch(format!("expected 3 input channels, got {c}")));
        }
        if n == 0 || h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "input {n}x{c}x{h}x{w}: batch must be non-empty and H, W divisible by 16"
            )));
        }
        Ok(())
    }

    fn forward_impl(&self, images: &Array4<f64>, all_heads: bool, keep: bool) -> (Vec<Array4<f64>>, Option<ForwardCache>) {
        let p = &self.params;
        let mut encoder_acts: Vec<Vec<Array4<f64>>> = Vec::with_capacity(NUM_SCALES);
        let mut x = normalize_input(images);
        for (s, convs) in self.encoder.iter().enumerate() {
            if s > 0 {
                x = maxpool2(&x);
            }
            let mut acts = vec![x];
            for conv in convs {
                let y = relu(&conv.forward(p, acts.last().expect("non-empty")));
                acts.push(y);
            }
            x = acts.last().expect("non-empty").clone();
            encoder_acts.push(acts);
        }
        let skip = |s: usize| encoder_acts[s].last().expect("stage output");

        let (bottleneck, attention) = match &self.attention {
            Some(att) => {
                let (y, cache) = att.forward(p, skip(4));
                (y, Some(cache))
            }
            None => (skip(4).clone(), None),
        };

        let mut features: Vec<Option<Array4<f64>>> = vec![None; NUM_SCALES];
        let mut decoder_acts: Vec<Vec<Array4<f64>>> = vec![Vec::new(); NUM_SCALES - 1];
        let mut logits = Vec::with_capacity(NUM_SCALES);
        if all_heads {
            logits.push(self.heads[4].forward(p, &bottleneck));
        }
        let mut d = bottleneck.clone();
        features[4] = Some(bottleneck);
        for s in (0..NUM_SCALES - 1).rev() {
            let target = skip(s);
            let (_, _, h, w) = target.dim();
            let up = upsample_bilinear(&d, h, w);
            let mut acts = vec![concat_channels(&up, target)];
            for conv in &self.decoder[s] {
                let y = relu(&conv.forward(p, acts.last().expect("non-empty")));
                acts.push(y);
            }
            d = acts.last().expect("non-empty").clone();
            if all_heads || s == 0 {
                logits.push(self.heads[s].forward(p, &d));
            }
            features[s] = Some(d.clone());
            if keep {
                decoder_acts[s] = acts;
            }
        }
        let cache = keep.then(|| ForwardCache {
            encoder: encoder_acts,
            attention,
            decoder: decoder_acts,
            features: features.into_iter().map(|f| f.expect("every stage visited")).collect(),
        });
        (logits, cache)
    }

    /// Logits at all five scales.
    pub fn forward_train(&self, images: &Array4<f64>) -> Result<PredictionPyramid> {
        self.check_input(images)?;
        Ok(PredictionPyramid {
            maps: self.forward_impl(images, true, false).0,
        })
    }

    /// Logits at all five scales plus the activations needed by [`SegModel::backward`].
    pub fn forward_with_cache(&self, images: &Array4<f64>) -> Result<(PredictionPyramid, ForwardCache)> {
        self.check_input(images)?;
        let (maps, cache) = self.forward_impl(images, true, true);
        Ok((PredictionPyramid { maps }, cache.expect("cache requested")))
    }

    /// Full-resolution logits only.
    pub fn forward_infer(&self, images: &Array4<f64>) -> Result<Array4<f64>> {
        self.check_input(images)?;
        let (mut maps, _) = self.forward_impl(images, false, false);
        Ok(maps.pop().expect("finest head"))
    }

    /// Per-pixel argmax class of [`SegModel::forward_infer`]: N×H×W building masks.
    pub fn predict_masks(&self, images: &Array4<f64>) -> Result<Array3<bool>> {
        Ok(argmax_building(&self.forward_infer(images)?))
    }

    /// Parameter gradients given the loss gradient of every pyramid level.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[Array4<f64>]) -> Grads {
        assert_eq!(dlogits.len(), NUM_SCALES, "one gradient per pyramid level");
        let p = &self.params;
        let mut g = p.zeros_like();

        // Head gradients into decoder features; pyramid index 4 - s is stage s.
        let mut dfeat: Vec<Array4<f64>> = (0..NUM_SCALES)
            .map(|s| {
                self.heads[s]
                    .backward(p, &cache.features[s], &dlogits[NUM_SCALES - 1 - s], &mut g, true)
                    .expect("dx requested")
            })
            .collect();

        let mut dskip: Vec<Option<Array4<f64>>> = vec![None; NUM_SCALES];
        for s in 0..NUM_SCALES - 1 {
            let acts = &cache.decoder[s];
            let mut d = dfeat[s].clone();
            for (k, conv) in self.decoder[s].iter().enumerate().rev() {
                d = relu_backward(&acts[k + 1], &d);
                d = conv.backward(p, &acts[k], &d, &mut g, true).expect("dx requested");
            }
            let coarse_channels = self.config.encoder_channels[s + 1];
            let (dup, dsk) = split_channels(&d, coarse_channels);
            let (_, _, h, w) = cache.features[s + 1].dim();
            dfeat[s + 1] += &upsample_bilinear_backward(&dup, h, w);
            dskip[s] = Some(dsk);
        }

        let enc4_out = cache.encoder[4].last().expect("stage output");
        let d_enc4 = match (&self.attention, &cache.attention) {
            (Some(att), Some(ac)) => att.backward(p, enc4_out, ac, &dfeat[4], &mut g),
            _ => dfeat[4].clone(),
        };
        dskip[4] = Some(d_enc4);

        let mut carry: Option<Array4<f64>> = None;
        for s in (0..NUM_SCALES).rev() {
            let mut d = dskip[s].take().expect("stage gradient");
            if let Some(c) = carry.take() {
                d += &c;
            }
            let acts = &cache.encoder[s];
            for (k, conv) in self.encoder[s].iter().enumerate().rev() {
                d = relu_backward(&acts[k + 1], &d);
                let need_dx = !(s == 0 && k == 0);
                match conv.backward(p, &acts[k], &d, &mut g, need_dx) {
                    Some(dx) => d = dx,
                    None => break,
                }
            }
            if s > 0 {
                carry = Some(maxpool2_backward(cache.encoder[s - 1].last().expect("stage output"), &d));
            }
        }
        g
    }

    pub fn checkpoint(&self, metadata: HashMap<String, String>) -> Result<Archive> {
        let mut metadata = metadata;
        metadata.insert(
            "model_config".into(),
            toml::to_string(&self.config).map_err(|e| Error::Config(e.to_string()))?,
        );
        Ok(Archive {
            tensors: self.params.iter().map(|(n, v)| (n.to_string(), v.clone())).collect(),
            metadata,
        })
    }

    /// Rebuilds a model from an archive written by [`SegModel::checkpoint`].
    pub fn from_checkpoint(archive: &Archive) -> Result<Self> {
        let text = archive
            .metadata
            .get("model_config")
            .ok_or_else(|| Error::Weights("checkpoint lacks model_config metadata".into()))?;
        let mut config: SegModelConfig = toml::from_str(text).map_err(|e| Error::Weights(e.to_string()))?;
        config.pretrained = None;
        let mut model = SegModel::new(config)?;
        for id in model.params.ids() {
            let name = model.params.name(id).to_string();
            let arr = archive
                .get(&name)
                .ok_or_else(|| Error::Weights(format!("checkpoint lacks {name}")))?;
            if arr.shape() != model.params.get(id).shape() {
                return Err(Error::Weights(format!("{name}: shape mismatch")));
            }
            *model.params.get_mut(id) = arr.clone();
        }
        Ok(model)
    }
}

/// Per-pixel argmax over classes, reporting class 1 (building) as `true`.
pub fn argmax_building(scores: &Array4<f64>) -> Array3<bool> {
    let (n, c, h, w) = scores.dim();
    Array3::from_shape_fn((n, h, w), |(b, y, x)| {
        let mut best = 0;
        for k in 1..c {
            if scores[[b, k, y, x]] > scores[[b, best, y, x]] {
                best = k;
            }
        }
        best == 1
    })
}

/// Class-index labels from boolean masks (building = 1).
pub fn mask_labels(masks: &Array3<bool>) -> Array3<usize> {
    masks.mapv(usize::from)
}

/// Shape of pyramid level `i` for an `h`×`w` input.
pub fn level_shape(i: usize, h: usize, w: usize) -> (usize, usize) {
    (h / SCALE_FACTORS[i], w / SCALE_FACTORS[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::train::loss::{multiscale_loss, SCALE_WEIGHTS};
    use rand::Rng;
    use rand::seq::index::sample;

    fn random_images(n: usize, h: usize, w: usize, seed: u64) -> Array4<f64> {
        let mut rng = stream(seed, Purpose::GradCheck, 1);
        Array4::from_shape_fn((n, 3, h, w), |_| rng.random_range(0.0..255.0))
    }

    #[test]
    fn pyramid_shapes_follow_scale_factors() {
        let model = SegModel::new(SegModelConfig::tiny()).unwrap();
        let pyr = model.forward_train(&random_images(2, 64, 64, 0)).unwrap();
        let sides: Vec<_> = pyr.maps.iter().map(|m| m.dim()).collect();
        assert_eq!(sides, vec![(2, 2, 4, 4), (2, 2, 8, 8), (2, 2, 16, 16), (2, 2, 32, 32), (2, 2, 64, 64)]);
        assert!(pyr.maps.iter().all(|m| m.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn pyramid_shapes_at_512() {
        let model = SegModel::new(SegModelConfig::tiny()).unwrap();
        let pyr = model.forward_train(&random_images(1, 512, 512, 1)).unwrap();
        let sides: Vec<_> = pyr.maps.iter().map(|m| m.dim().2).collect();
        assert_eq!(sides, vec![32, 64, 128, 256, 512]);
    }

    #[test]
    fn inference_equals_finest_training_level() {
        let model = SegModel::new(SegModelConfig::tiny()).unwrap();
        let x = random_images(2, 32, 48, 2);
        let pyr = model.forward_train(&x).unwrap();
        assert_eq!(&model.forward_infer(&x).unwrap(), pyr.finest());
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = SegModel::new(SegModelConfig::tiny()).unwrap();
        assert!(model.forward_infer(&Array4::zeros((1, 3, 30, 32))).is_err());
        assert!(model.forward_infer(&Array4::zeros((1, 1, 32, 32))).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = SegModel::new(SegModelConfig::tiny()).unwrap();
        let b = SegModel::new(SegModelConfig::tiny()).unwrap();
        assert_eq!(a.params, b.params);
        let c = SegModel::new(SegModelConfig { init_seed: 9, ..SegModelConfig::tiny() }).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn checkpoint_roundtrip_reproduces_predictions() {
        let model = SegModel::new(SegModelConfig::tiny()).unwrap();
        let bytes = model.checkpoint(HashMap::new()).unwrap().to_bytes().unwrap();
        let back = SegModel::from_checkpoint(&Archive::from_bytes(&bytes).unwrap()).unwrap();
        let x = random_images(1, 32, 32, 3);
        assert_eq!(model.forward_infer(&x).unwrap(), back.forward_infer(&x).unwrap());
    }

    fn loss_of(model: &SegModel, x: &Array4<f64>, labels: &Array3<usize>, valid: &Array3<bool>) -> f64 {
        multiscale_loss(&model.forward_train(x).unwrap(), labels, valid, &SCALE_WEIGHTS)
            .unwrap()
            .total
    }

    fn gradient_check(attention: AttentionMode) {
        let config = SegModelConfig { attention, ..SegModelConfig::tiny() };
        let mut model = SegModel::new(config).unwrap();
        let x = random_images(1, 32, 32, 5);
        let mut rng = stream(6, Purpose::GradCheck, 2);
        let labels = Array3::from_shape_fn((1, 32, 32), |(_, y, x)| usize::from((x / 8 + y / 8) % 2 == 0));
        let valid = Array3::from_elem((1, 32, 32), true);
        let (pyr, cache) = model.forward_with_cache(&x).unwrap();
        let ms = multiscale_loss(&pyr, &labels, &valid, &SCALE_WEIGHTS).unwrap();
        let grads = model.backward(&cache, &ms.grads);

        // Sample parameters across all tensors, weighted by size.
        let flat: Vec<(ParamIdx, usize)> = model
            .params
            .ids()
            .flat_map(|id| (0..model.params.get(id).len()).map(move |j| (id, j)))
            .collect();
        let picks = sample(&mut rng, flat.len(), 20);
        let h = 1e-5;
        let mut checked = 0;
        for k in picks.iter() {
            let (id, j) = flat[k];
            let analytic = grads.get(id).as_slice_memory_order().unwrap()[j];
            let orig = model.params.get(id).as_slice_memory_order().unwrap()[j];
            model.params.get_mut(id).as_slice_memory_order_mut().unwrap()[j] = orig + h;
            let plus = loss_of(&model, &x, &labels, &valid);
            model.params.get_mut(id).as_slice_memory_order_mut().unwrap()[j] = orig - h;
            let minus = loss_of(&model, &x, &labels, &valid);
            model.params.get_mut(id).as_slice_memory_order_mut().unwrap()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs());
            if scale < 1e-9 {
                continue;
            }
            let rel = (analytic - numeric).abs() / scale;
            assert!(rel < 1e-3, "{}[{j}]: analytic {analytic} numeric {numeric}", model.params.name(id));
            checked += 1;
        }
        assert!(checked >= 10, "only {checked} parameters had measurable gradients");
    }

    type ParamIdx = crate::nn::ParamId;

    #[test]
    fn gradients_match_finite_differences() {
        gradient_check(AttentionMode::ChannelPosition);
    }

    #[test]
    fn gradients_match_finite_differences_without_attention() {
        gradient_check(AttentionMode::Off);
    }
}
