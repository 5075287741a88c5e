//! Batch style mixing: geometric augmentation, colour augmentation and style
//! mixing applied in that order, each behind its own Bernoulli gate.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_color, apply_geometric, AugmentationConfig, ColorParams, GeometricParams};
use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::stylemix::{style_mix_batch, FeatureTransform, StyleMixConfig, StyleMixTrace};

/// Which of GA, CA and SM may run. Parsed from and printed as `baseline`,
/// `GA`, `GA+SM`, `GA+CA+SM` and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Submodules {
    pub ga: bool,
    pub ca: bool,
    pub sm: bool,
}

impl Submodules {
    pub const NONE: Submodules = Submodules { ga: false, ca: false, sm: false };
    pub const ALL: Submodules = Submodules { ga: true, ca: true, sm: true };

    /// The eight ablation rows in report order.
    pub fn ablation_rows() -> [Submodules; 8] {
        let s = |ga, ca, sm| Submodules { ga, ca, sm };
        [
            s(false, false, false),
            s(true, false, false),
            s(false, true, false),
            s(false, false, true),
            s(true, true, false),
            s(true, false, true),
            s(false, true, true),
            s(true, true, true),
        ]
    }
}

impl Default for Submodules {
    fn default() -> Self {
        Submodules::ALL
    }
}

impl fmt::Display for Submodules {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.ga, "GA"), (self.ca, "CA"), (self.sm, "SM")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        if names.is_empty() {
            f.write_str("baseline")
        } else {
            f.write_str(&names.join("+"))
        }
    }
}

impl FromStr for Submodules {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut out = Submodules::NONE;
        if s.eq_ignore_ascii_case("baseline") || s.eq_ignore_ascii_case("none") {
            return Ok(out);
        }
        for part in s.split('+') {
            let flag = match part.trim().to_ascii_uppercase().as_str() {
                "GA" => &mut out.ga,
                "CA" => &mut out.ca,
                "SM" => &mut out.sm,
                "BSM" => {
                    out = Submodules::ALL;
                    continue;
                }
                other => return Err(Error::Config(format!("unknown submodule {other:?} in {s:?}"))),
            };
            *flag = true;
        }
        Ok(out)
    }
}

impl TryFrom<String> for Submodules {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Submodules> for String {
    fn from(s: Submodules) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsmConfig {
    pub p_ga: f64,
    pub p_ca: f64,
    pub p_sm: f64,
    pub enabled: Submodules,
    pub augment: AugmentationConfig,
    pub style_mix: StyleMixConfig,
}

impl Default for BsmConfig {
    fn default() -> Self {
        BsmConfig {
            p_ga: 0.5,
            p_ca: 0.5,
            p_sm: 0.5,
            enabled: Submodules::ALL,
            augment: AugmentationConfig::default(),
            style_mix: StyleMixConfig::default(),
        }
    }
}

impl BsmConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_ga", self.p_ga), ("p_ca", self.p_ca), ("p_sm", self.p_sm)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        self.augment.validate()?;
        self.style_mix.validate()
    }

    pub fn with_enabled(&self, enabled: Submodules) -> Self {
        BsmConfig { enabled, ..self.clone() }
    }
}

/// Everything one [`bsm_apply`] call drew.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentationTrace {
    pub fired: Submodules,
    pub geometric: Vec<GeometricParams>,
    pub color: Vec<ColorParams>,
    pub style: Option<StyleMixTrace>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

impl AugmentationTrace {
    /// One tab-separated record:
    /// `batch=<i> seed=<s> fired=<GA+SM> geo=<...> color=<...> perm=<...>`.
    pub fn to_line(&self, batch_index: u64, seed: u64) -> String {
        let mut line = format!("batch={batch_index}\tseed={seed}\tfired={}", self.fired);
        let geo: Vec<String> = self
            .geometric
            .iter()
            .map(|g| {
                format!(
                    "h{}v{}r{:.4}s{:.4}",
                    u8::from(g.hflip),
                    u8::from(g.vflip),
                    g.angle_deg,
                    g.scale
                )
            })
            .collect();
        let color: Vec<String> = self
            .color
            .iter()
            .map(|c| {
                format!(
                    "b{}c{}k{}s{}g{}",
                    opt(c.brightness),
                    opt(c.color_balance),
                    opt(c.contrast),
                    opt(c.sharpness),
                    opt(c.blur_sigma)
                )
            })
            .collect();
        let _ = write!(line, "\tgeo={}", if geo.is_empty() { "-".into() } else { geo.join(";") });
        let _ = write!(line, "\tcolor={}", if color.is_empty() { "-".into() } else { color.join(";") });
        let perm = self.style.as_ref().map_or_else(
            || "-".to_string(),
            |s| s.permutation.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        let _ = write!(line, "\tperm={perm}");
        line
    }
}

/// Runs GA, CA and SM in that order. All three gates are drawn first (so the
/// gate sequence does not depend on which submodules are enabled); a
/// submodule runs iff it is enabled and its gate fired.
pub fn bsm_apply(
    batch: &SampleBatch,
    cfg: &BsmConfig,
    transform: &FeatureTransform,
    rng: &mut impl Rng,
) -> Result<(SampleBatch, AugmentationTrace)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("augmentation needs a non-empty batch".into()));
    }
    let gates = [rng.random_bool(cfg.p_ga), rng.random_bool(cfg.p_ca), rng.random_bool(cfg.p_sm)];
    let fired = Submodules {
        ga: cfg.enabled.ga && gates[0],
        ca: cfg.enabled.ca && gates[1],
        sm: cfg.enabled.sm && gates[2],
    };
    let mut trace = AugmentationTrace {
        fired,
        ..Default::default()
    };
    let mut x = batch.clone();
    if fired.ga {
        let (out, params) = apply_geometric(&x, &cfg.augment, rng);
        x = out;
        trace.geometric = params;
    }
    if fired.ca {
        let (out, params) = apply_color(&x, &cfg.augment, rng);
        x = out;
        trace.color = params;
    }
    if fired.sm {
        let (out, st) = style_mix_batch(&x, &cfg.style_mix, transform, rng)?;
        x = out;
        trace.style = Some(st);
    }
    Ok((x, trace))
}
