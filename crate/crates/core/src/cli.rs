//! The `bsm` command line.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ndarray::{s, Array3};

use crate::batch::SampleBatch;
use crate::config::{ExperimentConfig, Overrides};
use crate::data::{generate_synthetic_dataset, prepare_dataset, write_image, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::eval::{
    emit_ablation, emit_report, evaluate, parse_ablation, parse_report, render_ablation_table, render_report_table,
    run_ablation, AblationSetup, ABLATION_FILE, REPORT_FILE,
};
use crate::model::SegModel;
use crate::nn::Archive;
use crate::rng::{stream, Purpose};
use crate::stylemix::style_mix_batch;
use crate::train::{train, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "bsm", version, about = "Batch style mixing for building extraction")]
pub struct Cli {
    /// Experiment configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `BSM_OUT` and `eval.out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (overrides `BSM_WORKERS` and `workers`).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Record the augmentation trace while training.
    #[arg(long, global = true)]
    pub trace: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand, PartialEq, Eq)]
pub enum Command {
    /// Tile, filter and split raw scenes into a dataset.
    Prepare,
    /// Generate the synthetic two-style dataset.
    Synth,
    /// Train on the train split.
    Train,
    /// Score a checkpoint on the evaluation split.
    Eval,
    /// Train and score every submodule combination.
    Ablate,
    /// Write before/after grids of one style-mixed batch.
    StylemixPreview,
    /// Re-render tables and charts from existing report files.
    Report,
}

/// Loads the configuration named by `cli` and applies overrides.
pub fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        workers: cli.workers,
    })?;
    Ok(cfg)
}

fn load_manifest(cfg: &ExperimentConfig) -> Result<(PathBuf, DatasetManifest)> {
    let root = cfg.data_root();
    let manifest = DatasetManifest::read(&root.join("manifest.tsv"))?;
    manifest.validate(&root)?;
    Ok((root, manifest))
}

/// Runs one command; returns the text to print.
pub fn dispatch(command: Command, cfg: &ExperimentConfig, trace: bool) -> Result<String> {
    match command {
        Command::Prepare => {
            let root = cfg.data_root();
            let m = prepare_dataset(&cfg.data.prepare, &root, cfg.seed)?;
            cfg.freeze(&root)?;
            Ok(format!(
                "prepared {} tiles in {} (train {}, val {}, test {})",
                m.entries.len(),
                root.display(),
                m.count(Split::Train),
                m.count(Split::Val),
                m.count(Split::Test)
            ))
        }
        Command::Synth => {
            let root = cfg.data_root();
            let m = generate_synthetic_dataset(&cfg.data.synthetic, &root)?;
            cfg.freeze(&root)?;
            Ok(format!(
                "wrote {} synthetic tiles to {} (train {}, val {}, test {})",
                m.entries.len(),
                root.display(),
                m.count(Split::Train),
                m.count(Split::Val),
                m.count(Split::Test)
            ))
        }
        Command::Train => {
            let (root, manifest) = load_manifest(cfg)?;
            let tiles = manifest.load_split(&root, Split::Train, cfg.workers)?;
            let out = cfg.stage_dir("train");
            cfg.freeze(&out)?;
            let mut model = SegModel::new(cfg.model.clone())?;
            let opts = TrainOptions {
                out_dir: Some(out.clone()),
                seed: cfg.seed,
                workers: cfg.workers,
                trace,
                config_hash: Some(cfg.hash()?),
            };
            let outcome = train(&mut model, &tiles, &cfg.bsm, &cfg.train, &opts)?;
            let last = outcome.log.last().map_or(f64::NAN, |r| r.loss);
            Ok(format!(
                "trained {} iterations on {} tiles in {:.1}s, final loss {last:.5}; checkpoint {}",
                outcome.log.len(),
                tiles.len(),
                outcome.seconds,
                outcome.checkpoint.as_deref().unwrap_or(Path::new("-")).display()
            ))
        }
        Command::Eval => {
            let (root, manifest) = load_manifest(cfg)?;
            let tiles = manifest.load_split(&root, cfg.eval.split, cfg.workers)?;
            let model = SegModel::from_checkpoint(&Archive::load(&cfg.checkpoint_path())?)?;
            let report = evaluate(&model, &tiles, cfg.workers, &cfg.hash()?)?;
            let out = cfg.stage_dir("eval");
            cfg.freeze(&out)?;
            emit_report(&report, &out)?;
            Ok(render_report_table(&report))
        }
        Command::Ablate => {
            let (root, manifest) = load_manifest(cfg)?;
            let train_tiles = manifest.load_split(&root, Split::Train, cfg.workers)?;
            let test_tiles = manifest.load_split(&root, cfg.eval.split, cfg.workers)?;
            let setup = AblationSetup {
                model: cfg.model.clone(),
                bsm: cfg.bsm.clone(),
                train: cfg.train.clone(),
                seed: cfg.seed,
                workers: cfg.workers,
            };
            let table = run_ablation(&train_tiles, &test_tiles, &setup, &cfg.ablation_rows())?;
            let out = cfg.stage_dir("ablation");
            cfg.freeze(&out)?;
            emit_ablation(&table, &out)?;
            Ok(render_ablation_table(&table))
        }
        Command::StylemixPreview => {
            let (root, manifest) = load_manifest(cfg)?;
            let tiles = manifest.load_split(&root, Split::Train, cfg.workers)?;
            let n = cfg.train.batch_size.min(tiles.len());
            if n == 0 {
                return Err(Error::InvalidArgument("no training tiles to preview".into()));
            }
            let mut rng = stream(cfg.seed, Purpose::Preview, 0);
            let mut order: Vec<usize> = (0..tiles.len()).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let batch = SampleBatch::from_tiles(order[..n].iter().map(|&i| &tiles[i]))?;
            let transform = cfg.bsm.style_mix.build_transform()?;
            let (mixed, st) = style_mix_batch(&batch, &cfg.bsm.style_mix, &transform, &mut rng)?;
            let out = cfg.stage_dir("preview");
            cfg.freeze(&out)?;
            write_image(&out.join("before.png"), &grid(&batch))?;
            write_image(&out.join("after.png"), &grid(&mixed))?;
            let pairs: Vec<String> = st
                .permutation
                .iter()
                .enumerate()
                .map(|(i, &p)| format!("{}\t{}", batch.ids[i], batch.ids[p]))
                .collect();
            let pairs_path = out.join("pairs.tsv");
            std::fs::write(&pairs_path, pairs.join("\n") + "\n").map_err(|e| Error::io(&pairs_path, e))?;
            Ok(format!(
                "wrote {} and {} ({n} tiles, alpha {})",
                out.join("before.png").display(),
                out.join("after.png").display(),
                cfg.bsm.style_mix.alpha
            ))
        }
        Command::Report => {
            let mut text = String::new();
            let eval_dir = cfg.stage_dir("eval");
            let ablation_dir = cfg.stage_dir("ablation");
            if eval_dir.join(REPORT_FILE).exists() {
                let report = parse_report(&read(&eval_dir.join(REPORT_FILE))?)?;
                emit_report(&report, &eval_dir)?;
                text.push_str(&render_report_table(&report));
            }
            if ablation_dir.join(ABLATION_FILE).exists() {
                let table = parse_ablation(&read(&ablation_dir.join(ABLATION_FILE))?)?;
                emit_ablation(&table, &ablation_dir)?;
                if !text.is_empty() {
                    text.push('\n');
                }
                text.push_str(&render_ablation_table(&table));
            }
            if text.is_empty() {
                return Err(Error::MissingFile(eval_dir.join(REPORT_FILE)));
            }
            Ok(text)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Images side by side with a 2-pixel white gap.
fn grid(batch: &SampleBatch) -> Array3<u8> {
    let (h, w, gap) = (batch.height(), batch.width(), 2);
    let n = batch.len();
    let mut out = Array3::from_elem((h, n * w + (n - 1) * gap, 3), 255u8);
    for i in 0..n {
        let x0 = i * (w + gap);
        out.slice_mut(s![.., x0..x0 + w, ..]).assign(&batch.image_u8(i));
    }
    out
}

/// Entry point of the `bsm` binary; returns the process exit status.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match effective_config(&cli).and_then(|cfg| dispatch(cli.command, &cfg, cli.trace)) {
        Ok(text) => {
            println!("{}", text.trim_end());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
