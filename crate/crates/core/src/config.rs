//! Experiment configuration: one TOML file per experiment.
//!
//! Every section and field is optional; omitted values take the defaults
//! below. Unknown keys are rejected.
//!
//! ```toml
//! seed = 0
//! workers = 1
//!
//! [data]
//! root = "runs/desk/data"        # dataset directory holding manifest.tsv
//! [data.synthetic]               # what `synth` generates
//! tiles_per_style = 64
//! [data.prepare]                 # what `prepare` tiles and splits
//! scenes = "raw/train"
//!
//! [bsm]
//! p_ga = 0.5
//! enabled = "GA+CA+SM"
//! [bsm.style_mix]
//! alpha = 0.5
//!
//! [model]
//! encoder_channels = [16, 32, 64, 128, 128]
//!
//! [train]
//! base_lr = 1e-4
//! total_iterations = 300
//!
//! [eval]
//! out_dir = "runs/desk"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bsm::{BsmConfig, Submodules};
use crate::data::{PrepareConfig, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::SegModelConfig;
use crate::train::TrainConfig;

pub const ENV_OUT: &str = "BSM_OUT";
pub const ENV_WORKERS: &str = "BSM_WORKERS";
/// Name of the effective configuration written beside every run's outputs.
pub const FROZEN_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory (with `manifest.tsv`). Defaults to `<out>/data`.
    pub root: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub prepare: PrepareConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Mean of per-image IoU.
    #[default]
    ImageMean,
    /// Mean of per-city pooled IoU.
    CityMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub out_dir: PathBuf,
    /// Aggregate printed as the headline number; both are always written.
    pub aggregation: Aggregation,
    pub split: Split,
    /// Checkpoint to score. Defaults to `<out>/train/model.safetensors`.
    pub checkpoint: Option<PathBuf>,
    /// Ablation rows; all eight when empty.
    pub ablation_rows: Vec<Submodules>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            out_dir: PathBuf::from("runs"),
            aggregation: Aggregation::ImageMean,
            split: Split::Test,
            checkpoint: None,
            ablation_rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workers: usize,
    pub data: DataConfig,
    pub bsm: BsmConfig,
    pub model: SegModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            workers: 1,
            data: DataConfig::default(),
            bsm: BsmConfig::default(),
            model: SegModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Command-line and environment overrides, applied in that precedence.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `path`; relative paths inside the file stay relative to the
    /// working directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.bsm.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.data.synthetic.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let p = &self.data.prepare;
        if p.tile_size == 0 || !(0.0..=1.0).contains(&p.train_ratio) {
            return Err(Error::Config("data.prepare needs tile_size > 0 and train_ratio in [0, 1]".into()));
        }
        Ok(())
    }

    /// Applies flags, then `BSM_OUT` / `BSM_WORKERS` for whatever the flags
    /// left unset.
    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        let env = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = o.out.clone().or_else(|| env(ENV_OUT).map(PathBuf::from)) {
            self.eval.out_dir = out;
        }
        let workers = match (o.workers, env(ENV_WORKERS)) {
            (Some(w), _) => Some(w),
            (None, Some(v)) => Some(
                v.parse()
                    .map_err(|_| Error::Config(format!("{ENV_WORKERS}={v:?} is not a worker count")))?,
            ),
            _ => None,
        };
        if let Some(w) = workers {
            self.workers = w;
        }
        self.validate()
    }

    pub fn data_root(&self) -> PathBuf {
        self.data.root.clone().unwrap_or_else(|| self.eval.out_dir.join("data"))
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.eval.out_dir.join(stage)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.eval
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.stage_dir("train").join(crate::train::trainer::FINAL_CHECKPOINT))
    }

    /// Hash of the effective configuration text.
    ///
    /// The output directory and worker count do not change results and are
    /// left out, so a run moved elsewhere or rerun with more threads keeps
    /// its hash.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.eval.out_dir = PathBuf::new();
        canonical.workers = 1;
        Ok(crate::eval::hash_text(&canonical.to_toml()?))
    }

    /// Writes the effective configuration to `dir/config.toml`.
    pub fn freeze(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(FROZEN_CONFIG);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn ablation_rows(&self) -> Vec<Submodules> {
        if self.eval.ablation_rows.is_empty() {
            Submodules::ablation_rows().to_vec()
        } else {
            self.eval.ablation_rows.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitRule;

    #[test]
    fn minimal_config_takes_documented_defaults() {
        let cfg = ExperimentConfig::from_toml("[data]\nroot = \"some/data\"\n").unwrap();
        assert_eq!(cfg.data.root.as_deref(), Some(Path::new("some/data")));
        assert_eq!(cfg.train.base_lr, 1e-4);
        assert_eq!(cfg.train.weight_decay, 5e-5);
        assert_eq!(cfg.train.poly_power, 0.9);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.bsm.style_mix.alpha, 0.5);
        assert_eq!((cfg.bsm.p_ga, cfg.bsm.p_ca, cfg.bsm.p_sm), (0.5, 0.5, 0.5));
        assert_eq!(cfg.bsm.enabled, Submodules::ALL);
        assert_eq!(cfg.data.prepare.tile_size, 512);
        assert_eq!(cfg.ablation_rows().len(), 8);
    }

    #[test]
    fn rejects_unknown_and_malformed_fields() {
        let err = ExperimentConfig::from_toml("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        let err = ExperimentConfig::from_toml("[train]\nbase_lr = \"fast\"\n").unwrap_err();
        assert!(err.to_string().contains("base_lr"), "{err}");
        let err = ExperimentConfig::from_toml("[bsm]\np_sm = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("p_sm"), "{err}");
        assert!(ExperimentConfig::from_toml("[bsm]\nenabled = \"GA+XY\"\n").is_err());
        assert!(matches!(ExperimentConfig::load(Path::new("/no/such/file.toml")), Err(Error::MissingFile(_))));
    }

    #[test]
    fn roundtrip_is_idempotent() {
        let text = "seed = 7\n[train]\ntotal_iterations = 50\nbatch_size = 4\n[bsm]\nenabled = \"CA+SM\"\n[eval]\nablation_rows = [\"baseline\", \"GA+CA+SM\"]\n";
        let a = ExperimentConfig::from_toml(text).unwrap();
        let once = a.to_toml().unwrap();
        let b = ExperimentConfig::from_toml(&once).unwrap();
        assert_eq!(a, b);
        assert_eq!(once, b.to_toml().unwrap());
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn hash_ignores_location_and_threads() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.eval.out_dir = PathBuf::from("/elsewhere");
        b.workers = 4;
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn flags_override_config() {
        let mut cfg = ExperimentConfig::default();
        let o = Overrides { seed: Some(3), out: Some("elsewhere".into()), workers: Some(2) };
        cfg.apply_overrides(&o).unwrap();
        assert_eq!((cfg.seed, cfg.workers), (3, 2));
        assert_eq!(cfg.data_root(), Path::new("elsewhere/data"));
        assert_eq!(cfg.checkpoint_path(), Path::new("elsewhere/train/model.safetensors"));
        assert!(cfg.apply_overrides(&Overrides { workers: Some(0), ..Default::default() }).is_err());
    }

    #[test]
    fn split_rule_prefers_counts() {
        let mut p = PrepareConfig::default();
        assert_eq!(p.split_rule(), SplitRule::Ratio(0.9));
        p.split_counts = Some([39346, 4381]);
        assert_eq!(p.split_rule(), SplitRule::Counts { train: 39346, val: 4381 });
    }
}
