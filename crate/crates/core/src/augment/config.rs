use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default range for random scaling.
pub const DEFAULT_SCALE_RANGE: [f64; 2] = [0.5, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// Operation menus of the GA and CA submodules.
///
/// Whether a submodule runs at all is decided by its gate in
/// [`BsmConfig`](crate::bsm::BsmConfig); the probabilities here apply to the
/// individual operations once a submodule is active. Every factor range
/// contains 1.0, the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub p_rotate: f64,
    pub p_scale: f64,
    pub rotation_bound_deg: f64,
    pub scale_range: [f64; 2],

    pub p_brightness: f64,
    pub p_color_balance: f64,
    pub p_contrast: f64,
    pub p_sharpness: f64,
    pub p_blur: f64,
    pub brightness_range: [f64; 2],
    pub color_balance_range: [f64; 2],
    pub contrast_range: [f64; 2],
    pub sharpness_range: [f64; 2],
    pub blur_sigma_range: [f64; 2],

    /// Resampling for images; masks always use nearest neighbour.
    pub image_interpolation: Interpolation,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            p_hflip: 0.5,
            p_vflip: 0.5,
            p_rotate: 0.5,
            p_scale: 0.5,
            rotation_bound_deg: 30.0,
            scale_range: DEFAULT_SCALE_RANGE,
            p_brightness: 0.5,
            p_color_balance: 0.5,
            p_contrast: 0.5,
            p_sharpness: 0.5,
            p_blur: 0.5,
            brightness_range: [0.5, 1.5],
            color_balance_range: [0.5, 1.5],
            contrast_range: [0.5, 1.5],
            sharpness_range: [0.5, 1.5],
            blur_sigma_range: [0.1, 2.0],
            image_interpolation: Interpolation::Bilinear,
        }
    }
}

impl AugmentationConfig {
    /// Every per-operation probability set to `p`.
    pub fn with_op_probability(mut self, p: f64) -> Self {
        for q in self.probabilities_mut() {
            *q = p;
        }
        self
    }

    fn probabilities_mut(&mut self) -> [&mut f64; 9] {
        [
            &mut self.p_hflip,
            &mut self.p_vflip,
            &mut self.p_rotate,
            &mut self.p_scale,
            &mut self.p_brightness,
            &mut self.p_color_balance,
            &mut self.p_contrast,
            &mut self.p_sharpness,
            &mut self.p_blur,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let mut copy = self.clone();
        if copy.probabilities_mut().iter().any(|p| !(0.0..=1.0).contains(&**p)) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(self.rotation_bound_deg >= 0.0) {
            return Err(Error::Config("rotation_bound_deg must be non-negative".into()));
        }
        if !(self.scale_range[0] > 0.0 && self.scale_range[0] <= self.scale_range[1]) {
            return Err(Error::Config(format!("scale_range {:?} must be positive and ordered", self.scale_range)));
        }
        for (name, [lo, hi]) in [
            ("brightness_range", self.brightness_range),
            ("color_balance_range", self.color_balance_range),
            ("contrast_range", self.contrast_range),
            ("sharpness_range", self.sharpness_range),
        ] {
            if !(lo >= 0.0 && lo <= hi) {
                return Err(Error::Config(format!("{name} [{lo}, {hi}] must be non-negative and ordered")));
            }
        }
        let [lo, hi] = self.blur_sigma_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("blur_sigma_range [{lo}, {hi}] must be positive and ordered")));
        }
        Ok(())
    }
}
