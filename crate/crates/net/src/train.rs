//! L1 training with Adam and a cosine learning-rate schedule.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pantcr_core::cloud::noise::derive_seed;
use pantcr_core::cloud::{Manifest, SamplePair};
use pantcr_core::metrics::{psnr, sam};
use pantcr_core::{Error, MultiBandRaster, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::config::NetworkConfig;
use crate::graph::Graph;
use crate::model::{PanTcr, Prepared};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_DIR: &str = "best";
pub const NAN_SNAPSHOT_FILE: &str = "nan_snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Extra `epoch_<n>` checkpoints every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_start: 3e-3,
            lr_end: 1e-6,
            epochs: 50,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return Err(Error::Validation(format!(
                "learning rates must satisfy lr_start > lr_end > 0 (got {} and {})",
                self.lr_start, self.lr_end
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || self.adam_eps <= 0.0
        {
            return Err(Error::Validation(
                "Adam betas must lie in [0, 1) and eps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `lr(e) = lr_end + ½(lr_start − lr_end)(1 + cos(π e / epochs))`.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.epochs {
        return Err(Error::Argument(format!(
            "epoch {epoch} outside 0..={}",
            cfg.epochs
        )));
    }
    let t = epoch as f64 / cfg.epochs as f64;
    Ok(cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + (PI * t).cos()))
}

/// Mean absolute error over all pixels and bands.
pub fn l1_loss(pred: &MultiBandRaster, target: &MultiBandRaster) -> Result<f64> {
    if pred.dims() != target.dims() {
        return Err(Error::Validation(format!(
            "l1_loss: {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let n = pred.data().len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| f64::from(a - b).abs())
        .sum::<f64>()
        / n)
}

fn l1_tensor(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    let n = pred.len() as f64;
    let mut g = Tensor::zeros(pred.c, pred.h, pred.w);
    let mut loss = 0.0;
    for ((gv, p), t) in g.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        loss += d.abs();
        *gv = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    (loss / n, g)
}

pub struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        Self {
            m: store.zeros_like(),
            v: store.zeros_like(),
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    /// One bias-corrected update; weights are then snapped to `f32`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let (m, v, g) = (&mut self.m[id.0], &mut self.v[id.0], &grads[id.0]);
            let p = store.get_mut(id);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        store.round_to_f32();
    }
}

/// A sample with network-ready inputs and its reference.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub input: Prepared,
    pub target: Tensor,
    pub target_raster: MultiBandRaster,
    pub lrmsi: MultiBandRaster,
    pub pan: MultiBandRaster,
}

impl TrainSample {
    pub fn new(model: &PanTcr, pair: &SamplePair) -> Result<Self> {
        let input = model.prepare(&pair.cloudy_lrmsi, &pair.cloudy_pan)?;
        Ok(TrainSample {
            id: pair.id.clone(),
            input,
            target: Tensor::from_raster(&pair.clean_hrmsi),
            target_raster: pair.clean_hrmsi.clone(),
            lrmsi: pair.cloudy_lrmsi.clone(),
            pan: pair.cloudy_pan.clone(),
        })
    }
}

/// Loss and parameter gradients of the batch-mean L1.
///
/// Per-sample passes run in parallel; gradients are summed in batch order so
/// the result does not depend on the thread count.
pub fn batch_gradients(model: &PanTcr, batch: &[&TrainSample]) -> (f64, Vec<Tensor>) {
    let per: Vec<(f64, Vec<Tensor>)> = batch
        .par_iter()
        .map(|s| {
            let mut g = Graph::new(model.params());
            let out = model.forward(&mut g, &s.input);
            let (loss, seed) = l1_tensor(g.value(out), &s.target);
            let grads = g.backward(out, seed);
            (loss, grads.param_grads(model.params()))
        })
        .collect();
    let b = batch.len() as f64;
    let mut total = model.params().zeros_like();
    let mut loss = 0.0;
    for (l, grads) in per {
        loss += l;
        for (acc, g) in total.iter_mut().zip(&grads) {
            acc.add_assign(g);
        }
    }
    total.iter_mut().for_each(|t| t.scale(1.0 / b));
    (loss / b, total)
}

/// Mean PSNR (dB) and SAM (degrees) of clipped predictions.
pub fn evaluate(model: &PanTcr, samples: &[TrainSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let scores: Vec<Result<(f64, f64)>> = samples
        .par_iter()
        .map(|s| {
            let pred = model.predict(&s.input)?;
            let r = pred.to_raster(
                s.target_raster.band_wavelengths_nm().to_vec(),
                s.target_raster.gsd_m(),
            )?;
            Ok((psnr(&r, &s.target_raster)?, sam(&r, &s.target_raster)?))
        })
        .collect();
    let mut p = 0.0;
    let mut a = 0.0;
    for s in scores {
        let (ps, sa) = s?;
        p += ps;
        a += sa;
    }
    let n = samples.len() as f64;
    Ok((p / n, a / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_l1: f64,
    pub val_psnr: f64,
    pub val_sam: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: usize,
    pub best_epoch: usize,
    pub best_val_psnr: f64,
    pub final_train_l1: f64,
    pub log: PathBuf,
    pub checkpoint: PathBuf,
}

#[derive(Serialize)]
struct NanSnapshot<'a> {
    epoch: usize,
    step: usize,
    lr: f64,
    loss: f64,
    batch: Vec<&'a str>,
    nonfinite_grads: Vec<String>,
}

pub fn load_split(
    manifest: &Manifest,
    root: &Path,
    split: &str,
    model: &PanTcr,
) -> Result<Vec<TrainSample>> {
    manifest
        .split(split)
        .iter()
        .map(|e| TrainSample::new(model, &manifest.load_sample(root, e)?))
        .collect()
}

/// Trains from scratch on the manifest's `train` split, selecting the
/// checkpoint with the best `val` PSNR.
pub fn train(
    manifest: &Manifest,
    data_root: &Path,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(PanTcr, TrainSummary)> {
    cfg.validate()?;
    let mut model = PanTcr::new(net_cfg.clone(), cfg.seed)?;
    let train_set = load_split(manifest, data_root, "train", &model)?;
    let val_set = load_split(manifest, data_root, "val", &model)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Validation(
            "train and val splits must both be non-empty".into(),
        ));
    }
    fit(&mut model, &train_set, &val_set, cfg, out_dir)
}

/// Optimises `model` in place; see [`train`].
pub fn fit(
    model: &mut PanTcr,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(PanTcr, TrainSummary)> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = File::create(&log_path)?;
    let best_dir = out_dir.join(BEST_DIR);
    let mut adam = Adam::new(model.params(), cfg);
    let start = Instant::now();
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut best_model = model.clone();
    let mut steps = 0;
    let mut last_l1 = f64::NAN;
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg)?;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch{epoch}")));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_gradients(model, &batch);
            let bad: Vec<String> = model
                .params()
                .ids()
                .filter(|id| !grads[id.0].is_finite())
                .map(|id| model.params().name(id).to_string())
                .collect();
            if !loss.is_finite() || !bad.is_empty() {
                let snap = NanSnapshot {
                    epoch,
                    step: steps,
                    lr,
                    loss,
                    batch: batch.iter().map(|s| s.id.as_str()).collect(),
                    nonfinite_grads: bad,
                };
                let path = out_dir.join(NAN_SNAPSHOT_FILE);
                fs::write(&path, serde_json::to_string_pretty(&snap)?)?;
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, step {steps}; snapshot written to {}",
                    path.display()
                )));
            }
            adam.step(model.params_mut(), &grads, lr);
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
            steps += 1;
        }
        last_l1 = epoch_loss / seen as f64;
        let (val_psnr, val_sam) = evaluate(model, val_set)?;
        let rec = EpochRecord {
            epoch,
            lr,
            train_l1: last_l1,
            val_psnr,
            val_sam,
            wall_s: start.elapsed().as_secs_f64(),
        };
        writeln!(log, "{}", serde_json::to_string(&rec)?)?;
        if val_psnr > best.1 || best.1 == f64::NEG_INFINITY {
            best = (epoch, val_psnr);
            best_model = model.clone();
            save_checkpoint(model, &best_dir)?;
        }
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            save_checkpoint(model, out_dir.join(format!("epoch_{}", epoch + 1)))?;
        }
    }
    let summary = TrainSummary {
        epochs: cfg.epochs,
        steps,
        best_epoch: best.0,
        best_val_psnr: best.1,
        final_train_l1: last_l1,
        log: log_path,
        checkpoint: best_dir,
    };
    Ok((best_model, summary))
}
