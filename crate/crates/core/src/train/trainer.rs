use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{multiscale_loss, SCALE_WEIGHTS};
use super::optim::Adam;
use super::schedule::poly_lr;
use crate::batch::SampleBatch;
use crate::bsm::{bsm_apply, AugmentationTrace, BsmConfig};
use crate::data::Tile;
use crate::error::{Error, Result};
use crate::model::{mask_labels, SegModel};
use crate::rng::{stream, Purpose};
use crate::stylemix::FeatureTransform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub batch_size: usize,
    /// Required before training; there is no sensible default budget.
    pub total_iterations: Option<usize>,
    /// Write an intermediate checkpoint every this many iterations (0 = final only).
    pub checkpoint_every: usize,
    pub loss_weights: [f64; 5],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-4,
            weight_decay: 5e-5,
            poly_power: 0.9,
            batch_size: 16,
            total_iterations: None,
            checkpoint_every: 0,
            loss_weights: SCALE_WEIGHTS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("train.base_lr = {} must be positive", self.base_lr)));
        }
        if !(self.poly_power > 0.0) {
            return Err(Error::Config(format!("train.poly_power = {} must be positive", self.poly_power)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("train.weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.loss_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("train.loss_weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn iterations(&self) -> Result<usize> {
        self.total_iterations
            .ok_or_else(|| Error::Config("train.total_iterations is required".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}", self.iteration, self.loss, self.lr)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad metrics line {line:?}"));
        let mut it = line.split('\t');
        let mut next = || it.next().ok_or_else(bad);
        let iteration = next()?.parse().map_err(|_| bad())?;
        let loss = next()?.parse().map_err(|_| bad())?;
        let lr = next()?.parse().map_err(|_| bad())?;
        Ok(LogRecord { iteration, loss, lr })
    }
}

/// Where and how a training run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for `metrics.tsv`, checkpoints and the trace. `None` keeps
    /// everything in memory.
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    /// Batches prepared ahead by a loader thread when > 1.
    pub workers: usize,
    pub trace: bool,
    /// Stored in checkpoint metadata.
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRecord>,
    pub checkpoint: Option<PathBuf>,
    pub seconds: f64,
}

pub const METRICS_FILE: &str = "metrics.tsv";
pub const TRACE_FILE: &str = "augmentation_trace.tsv";
pub const FINAL_CHECKPOINT: &str = "model.safetensors";

/// Sample indices of the batch used at `iteration`: the training set is
/// walked in a fresh seeded order every epoch.
pub struct BatchOrder {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: Option<(usize, Vec<usize>)>,
}

impl BatchOrder {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        BatchOrder { n, batch, seed, epoch: None }
    }

    pub fn indices(&mut self, iteration: usize) -> Vec<usize> {
        (0..self.batch)
            .map(|j| {
                let p = iteration * self.batch + j;
                let epoch = p / self.n;
                if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
                    let mut perm: Vec<usize> = (0..self.n).collect();
                    perm.shuffle(&mut stream(self.seed, Purpose::DataOrder, epoch as u64));
                    self.epoch = Some((epoch, perm));
                }
                self.epoch.as_ref().expect("epoch set").1[p % self.n]
            })
            .collect()
    }
}

fn augmented_batch(
    data: &SampleBatch,
    order: &[usize],
    bsm: &BsmConfig,
    transform: &FeatureTransform,
    seed: u64,
    iteration: usize,
) -> Result<(SampleBatch, AugmentationTrace)> {
    bsm_apply(&data.select(order), bsm, transform, &mut stream(seed, Purpose::Augment, iteration as u64))
}

fn save_checkpoint(model: &SegModel, opts: &TrainOptions, iteration: usize, path: &Path) -> Result<()> {
    let mut meta = HashMap::new();
    meta.insert("iteration".to_string(), iteration.to_string());
    meta.insert("seed".to_string(), opts.seed.to_string());
    if let Some(h) = &opts.config_hash {
        meta.insert("config_hash".to_string(), h.clone());
    }
    model.checkpoint(meta)?.save(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Trains `model` in place on `tiles` with BSM augmentation.
pub fn train(
    model: &mut SegModel,
    tiles: &[Tile],
    bsm: &BsmConfig,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    bsm.validate()?;
    let total = cfg.iterations()?;
    if tiles.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let data = SampleBatch::from_tiles(tiles)?;
    let transform = bsm.style_mix.build_transform()?;
    let start = Instant::now();

    let (mut metrics, mut trace) = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let trace = if opts.trace { Some(create(&dir.join(TRACE_FILE))?) } else { None };
            (Some(create(&dir.join(METRICS_FILE))?), trace)
        }
        None => (None, None),
    };
    let io_err = |e: std::io::Error| Error::io(opts.out_dir.as_deref().unwrap_or(Path::new(".")), e);

    let mut adam = Adam::new(&model.params, cfg.weight_decay);
    let mut log = Vec::with_capacity(total);
    let mut order = BatchOrder::new(data.len(), cfg.batch_size, opts.seed);

    let mut step = |model: &mut SegModel,
                    iteration: usize,
                    x: SampleBatch,
                    t: AugmentationTrace,
                    log: &mut Vec<LogRecord>|
     -> Result<()> {
        if let Some(w) = trace.as_mut() {
            writeln!(w, "{}", t.to_line(iteration as u64, opts.seed)).map_err(io_err)?;
        }
        let lr = poly_lr(cfg.base_lr, iteration, total, cfg.poly_power)?;
        let labels = mask_labels(&x.masks);
        let (pyramid, cache) = model.forward_with_cache(&x.images)?;
        let ms = multiscale_loss(&pyramid, &labels, &x.valid, &cfg.loss_weights)?;
        if !ms.total.is_finite() {
            let last_good = match &opts.out_dir {
                Some(dir) => {
                    let path = dir.join("last_good.safetensors");
                    save_checkpoint(model, opts, iteration, &path)?;
                    path.display().to_string()
                }
                None => "(not saved: no output directory)".to_string(),
            };
            return Err(Error::NonFiniteLoss { iteration, last_good });
        }
        let grads = model.backward(&cache, &ms.grads);
        adam.step(&mut model.params, &grads, lr);
        let record = LogRecord { iteration, loss: ms.total, lr };
        if let Some(w) = metrics.as_mut() {
            writeln!(w, "{}", record.to_line()).map_err(io_err)?;
        }
        if iteration % 50 == 0 {
            log::info!("iteration {iteration}/{total} loss {:.5} lr {lr:.3e}", ms.total);
        }
        log.push(record);
        if let Some(dir) = &opts.out_dir {
            let done = iteration + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < total {
                save_checkpoint(model, opts, done, &dir.join(format!("checkpoint_{done:06}.safetensors")))?;
            }
        }
        Ok(())
    };

    if opts.workers > 1 {
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = sync_channel(opts.workers);
            let data = &data;
            let transform = &transform;
            let orders: Vec<Vec<usize>> = (0..total).map(|i| order.indices(i)).collect();
            scope.spawn(move || {
                for (i, o) in orders.iter().enumerate() {
                    let item = augmented_batch(data, o, bsm, transform, opts.seed, i);
                    if tx.send(item).is_err() {
                        break;
                    }
                }
            });
            for iteration in 0..total {
                let (x, t) = rx.recv().expect("loader thread alive")?;
                step(model, iteration, x, t, &mut log)?;
            }
            Ok(())
        })?;
    } else {
        for iteration in 0..total {
            let (x, t) = augmented_batch(&data, &order.indices(iteration), bsm, &transform, opts.seed, iteration)?;
            step(model, iteration, x, t, &mut log)?;
        }
    }
    drop(step);

    let checkpoint = match &opts.out_dir {
        Some(dir) => {
            let path = dir.join(FINAL_CHECKPOINT);
            save_checkpoint(model, opts, total, &path)?;
            Some(path)
        }
        None => None,
    };
    if let Some(w) = metrics.as_mut() {
        w.flush().map_err(io_err)?;
    }
    if let Some(w) = trace.as_mut() {
        w.flush().map_err(io_err)?;
    }
    Ok(TrainOutcome {
        log,
        checkpoint,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Reads a metrics log written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(LogRecord::parse).collect()
}
