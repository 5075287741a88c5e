//! Two-style synthetic building scenes.
//!
//! Every tile is drawn from one shared content model (smooth ground, a few
//! roads, rectangular roofs) and then rendered through exactly one of two
//! styles: `pixel = bias + contrast * content + N(0, noise)`, per channel,
//! with optional per-tile jitter of bias and contrast.
//! The first style forms the train/val split, the second the test split, so a
//! model trained on the first is evaluated on an unseen style.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{split_trainval, DatasetManifest, ManifestEntry, Split, SplitRule};
use super::tile::{save_tile, tile_id, Tile};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

const GROUND: [f64; 3] = [-0.35, -0.05, -0.45];
const ROAD: [f64; 3] = [-0.85, -0.85, -0.75];
const ROOF: [f64; 3] = [0.75, 0.55, 0.45];
const ROOF_JITTER: f64 = 0.25;
const GROUND_WAVE_AMPLITUDE: f64 = 0.12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleParams {
    /// Also used as the city tag of every tile rendered in this style.
    pub name: String,
    pub bias: [f64; 3],
    pub contrast: [f64; 3],
    /// Standard deviation of additive per-pixel noise, in intensity units.
    pub noise: f64,
    /// Per-tile uniform offset range added to every channel's bias, so one
    /// style can cover a spread of acquisitions.
    #[serde(default)]
    pub bias_jitter: f64,
    /// Per-tile relative range for each channel's contrast.
    #[serde(default)]
    pub contrast_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub tiles_per_style: usize,
    pub tile_size: usize,
    /// Inclusive range.
    pub buildings_per_tile: [usize; 2],
    /// Inclusive range of building edge lengths in pixels.
    pub building_size: [usize; 2],
    /// Inclusive range of roads per tile.
    pub roads_per_tile: [usize; 2],
    /// `styles[0]` is the training domain, `styles[1]` the held-out one.
    pub styles: [StyleParams; 2],
    /// Fraction of source-style tiles assigned to train.
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            tiles_per_style: 64,
            tile_size: 64,
            buildings_per_tile: [2, 5],
            building_size: [6, 16],
            roads_per_tile: [0, 2],
            styles: [
                StyleParams {
                    name: "SynA".into(),
                    bias: [110.0, 115.0, 100.0],
                    contrast: [60.0, 60.0, 55.0],
                    noise: 6.0,
                    bias_jitter: 30.0,
                    contrast_jitter: 0.3,
                },
                StyleParams {
                    name: "SynB".into(),
                    bias: [150.0, 135.0, 160.0],
                    contrast: [35.0, 40.0, 30.0],
                    noise: 14.0,
                    bias_jitter: 0.0,
                    contrast_jitter: 0.0,
                },
            ],
            train_ratio: 0.9,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.tiles_per_style == 0 || self.tile_size == 0 {
            return bad("tiles_per_style and tile_size must be positive".into());
        }
        for (name, [lo, hi]) in [
            ("buildings_per_tile", self.buildings_per_tile),
            ("building_size", self.building_size),
            ("roads_per_tile", self.roads_per_tile),
        ] {
            if lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] is empty"));
            }
        }
        if self.building_size[0] == 0 || self.building_size[1] > self.tile_size {
            return bad(format!(
                "building_size {:?} must lie within [1, {}]",
                self.building_size, self.tile_size
            ));
        }
        if self.styles[0] == self.styles[1] || self.styles[0].name == self.styles[1].name {
            return bad("the two styles must differ".into());
        }
        for s in &self.styles {
            if !(s.noise >= 0.0 && s.bias_jitter >= 0.0 && (0.0..1.0).contains(&s.contrast_jitter)) || s.contrast.iter().chain(&s.bias).any(|v| !v.is_finite()) {
                return bad(format!("style '{}' has invalid parameters", s.name));
            }
        }
        if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0) {
            return bad(format!("train_ratio {} outside (0, 1]", self.train_ratio));
        }
        Ok(())
    }
}

struct Content {
    /// 3×H×W content values.
    values: Array3<f64>,
    mask: Array2<bool>,
}

fn draw_content(spec: &SyntheticSpec, rng: &mut impl Rng) -> Content {
    let n = spec.tile_size;
    let mut values = Array3::zeros((3, n, n));
    let mut mask = Array2::from_elem((n, n), false);

    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let period = rng.random_range(0.5..2.0) * n as f64;
            let theta = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            (2.0 * PI * theta.cos() / period, 2.0 * PI * theta.sin() / period, phase)
        })
        .collect();
    for y in 0..n {
        for x in 0..n {
            let field: f64 = waves
                .iter()
                .map(|&(fx, fy, ph)| GROUND_WAVE_AMPLITUDE * (fx * x as f64 + fy * y as f64 + ph).cos())
                .sum();
            for c in 0..3 {
                values[[c, y, x]] = GROUND[c] + field;
            }
        }
    }

    let roads = rng.random_range(spec.roads_per_tile[0]..=spec.roads_per_tile[1]);
    for _ in 0..roads {
        let width = rng.random_range(2..=4).min(n);
        let start = rng.random_range(0..=n - width);
        let vertical = rng.random_bool(0.5);
        for a in start..start + width {
            for b in 0..n {
                let (y, x) = if vertical { (b, a) } else { (a, b) };
                for c in 0..3 {
                    values[[c, y, x]] = ROAD[c];
                }
            }
        }
    }

    let buildings = rng.random_range(spec.buildings_per_tile[0]..=spec.buildings_per_tile[1]);
    for _ in 0..buildings {
        let [lo, hi] = spec.building_size;
        let (h, w) = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
        let (y0, x0) = (rng.random_range(0..=n - h), rng.random_range(0..=n - w));
        let roof: Vec<f64> = ROOF
            .iter()
            .map(|&v| v + rng.random_range(-ROOF_JITTER..ROOF_JITTER))
            .collect();
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                mask[[y, x]] = true;
                for c in 0..3 {
                    values[[c, y, x]] = roof[c];
                }
            }
        }
    }
    Content { values, mask }
}

fn render(content: &Content, style: &StyleParams, rng: &mut impl Rng) -> Array3<u8> {
    let (_, h, w) = content.values.dim();
    let noise = Normal::new(0.0, style.noise.max(0.0)).expect("noise std is validated");
    let jitter = |r: &mut dyn rand::RngCore, range: f64| if range > 0.0 { r.random_range(-range..range) } else { 0.0 };
    let bias: Vec<f64> = style.bias.iter().map(|b| b + jitter(rng, style.bias_jitter)).collect();
    let contrast: Vec<f64> = style.contrast.iter().map(|c| c * (1.0 + jitter(rng, style.contrast_jitter))).collect();
    let mut image = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = bias[c] + contrast[c] * content.values[[c, y, x]] + noise.sample(rng);
                image[[y, x, c]] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    image
}

/// Renders tile `index` of style `style` (0 or 1).
pub fn render_tile(spec: &SyntheticSpec, style: usize, index: usize) -> Tile {
    let global = (style * spec.tiles_per_style + index) as u64;
    let mut rng = stream(spec.seed, Purpose::Synthetic, global);
    let content = draw_content(spec, &mut rng);
    let params = &spec.styles[style];
    let image = render(&content, params, &mut rng);
    Tile::new(tile_id(&params.name, index + 1), params.name.clone(), image, content.mask)
        .expect("rendered shapes agree")
}

/// All tiles with their split: source style split into train/val, target style as test.
pub fn generate_tiles(spec: &SyntheticSpec) -> Result<Vec<(Tile, Split)>> {
    spec.validate()?;
    let manifest = synthetic_manifest(spec)?;
    let tiles = (0..2).flat_map(|s| (0..spec.tiles_per_style).map(move |i| render_tile(spec, s, i)));
    Ok(tiles.zip(manifest.entries.iter().map(|e| e.split)).collect())
}

fn synthetic_manifest(spec: &SyntheticSpec) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(2 * spec.tiles_per_style);
    for (s, style) in spec.styles.iter().enumerate() {
        for i in 0..spec.tiles_per_style {
            let id = tile_id(&style.name, i + 1);
            entries.push(ManifestEntry {
                image: PathBuf::from(format!("images/{id}.png")),
                mask: PathBuf::from(format!("labels/{id}.png")),
                id,
                city: style.name.clone(),
                split: if s == 0 { Split::Train } else { Split::Test },
            });
        }
    }
    split_trainval(
        &DatasetManifest { entries, seed: spec.seed },
        SplitRule::Ratio(spec.train_ratio),
        spec.seed,
    )
}

/// Writes tiles as PNG under `dir/images`, `dir/labels` plus `dir/manifest.tsv`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let manifest = synthetic_manifest(spec)?;
    for (k, entry) in manifest.entries.iter().enumerate() {
        let (s, i) = (k / spec.tiles_per_style, k % spec.tiles_per_style);
        let tile = render_tile(spec, s, i);
        debug_assert_eq!(tile.id, entry.id);
        save_tile(&tile, &dir.join(&entry.image), &dir.join(&entry.mask))?;
    }
    manifest.write(&dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            tiles_per_style: 6,
            tile_size: 24,
            building_size: [3, 8],
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn deterministic_byte_identical_output() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_synthetic_dataset(&small(), a.path()).unwrap();
        let mb = generate_synthetic_dataset(&small(), b.path()).unwrap();
        assert_eq!(ma, mb);
        ma.validate(a.path()).unwrap();
        for e in &ma.entries {
            for p in [&e.image, &e.mask] {
                assert_eq!(std::fs::read(a.path().join(p)).unwrap(), std::fs::read(b.path().join(p)).unwrap());
            }
        }
        assert_eq!(
            std::fs::read(a.path().join("manifest.tsv")).unwrap(),
            std::fs::read(b.path().join("manifest.tsv")).unwrap()
        );
    }

    #[test]
    fn loaded_tiles_match_rendered_tiles() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small();
        let m = generate_synthetic_dataset(&spec, dir.path()).unwrap();
        let test = m.load_split(dir.path(), Split::Test, 3).unwrap();
        let rendered: Vec<Tile> = generate_tiles(&spec)
            .unwrap()
            .into_iter()
            .filter(|(_, s)| *s == Split::Test)
            .map(|(t, _)| t)
            .collect();
        assert_eq!(test, rendered);
    }

    #[test]
    fn zero_buildings_give_empty_masks() {
        let spec = SyntheticSpec {
            buildings_per_tile: [0, 0],
            ..small()
        };
        assert!(generate_tiles(&spec).unwrap().iter().all(|(t, _)| !t.has_building()));
    }

    #[test]
    fn splits_follow_styles() {
        let spec = small();
        let tiles = generate_tiles(&spec).unwrap();
        for (t, split) in &tiles {
            let expected_test = t.city == spec.styles[1].name;
            assert_eq!(*split == Split::Test, expected_test, "{}", t.id);
        }
        let train = tiles.iter().filter(|(_, s)| *s == Split::Train).count();
        assert_eq!(train, (0.9f64 * 6.0).round() as usize);
    }

    #[test]
    fn style_channel_means_separate() {
        let spec = SyntheticSpec {
            tiles_per_style: 12,
            ..small()
        };
        let tiles = generate_tiles(&spec).unwrap();
        let mean = |city: &str, c: usize| {
            let (sum, n) = tiles
                .iter()
                .filter(|(t, _)| t.city == city)
                .flat_map(|(t, _)| t.image.index_axis(ndarray::Axis(2), c).iter().map(|&v| v as f64).collect::<Vec<_>>())
                .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            sum / n as f64
        };
        let [a, b] = &spec.styles;
        for c in 0..3 {
            let observed = (mean(&b.name, c) - mean(&a.name, c)).abs();
            // Content values stay within [-1.2, 1.2]; the contrast difference
            // can move the mean by at most that much, the noise averages out.
            let margin = (b.contrast[c] - a.contrast[c]).abs() * 1.2 + 3.0 * (a.noise + b.noise) / (24.0 * 24.0 * 12.0f64).sqrt();
            assert!(observed >= (b.bias[c] - a.bias[c]).abs() - margin, "channel {c}: {observed}");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small();
        s.building_size = [9, 3];
        assert!(s.validate().is_err());
        let mut s = small();
        s.styles[1] = s.styles[0].clone();
        assert!(s.validate().is_err());
        let mut s = small();
        s.building_size = [1, 100];
        assert!(generate_tiles(&s).is_err());
    }
}
