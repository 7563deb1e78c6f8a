//! Identity-balanced batches, the learning-rate schedule and the training
//! loop with checkpointing and validation-based model selection.

mod checkpoint;
mod optim;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::ArrayView4;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, Split, VideoRecord};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig};
use crate::model::{Model, ModelConfig};
use crate::nn::{Module, Param};
use crate::objective::{supcon_with_grad, SupConConfig};
use crate::sampling::{clip_rng, make_clip_with_rng, SampleMode, SamplerConfig};
use crate::seeding::derive_seed_n;

pub use checkpoint::{
    load_checkpoint, read_checkpoint_meta, save_checkpoint, CheckpointMeta, RngState,
    SCHEMA_VERSION, SIDECAR_FILE as CHECKPOINT_SIDECAR, WEIGHTS_FILE,
};
pub use optim::{clip_grad_norm, global_grad_norm, round_to_half, AdamW, LossScaler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Distinct drivers per batch.
    pub n_identities_per_batch: usize,
    /// Clips per driver in a batch.
    pub clips_per_identity: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub grad_clip_norm: f64,
    pub mixed_precision: bool,
    pub seed: u64,
    /// Older per-epoch checkpoints beyond this many are deleted.
    pub keep_epoch_checkpoints: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_identities_per_batch: 16,
            clips_per_identity: 8,
            epochs: 150,
            steps_per_epoch: 200,
            base_lr: 1e-3,
            weight_decay: 1e-4,
            warmup_epochs: 5,
            grad_clip_norm: 1.0,
            mixed_precision: false,
            seed: 0,
            keep_epoch_checkpoints: 3,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.n_identities_per_batch * self.clips_per_identity
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_identities_per_batch < 2 {
            return bad("n_identities_per_batch must be at least 2");
        }
        if self.clips_per_identity < 2 {
            return bad("clips_per_identity must be at least 2 so every anchor has a positive");
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return bad("epochs and steps_per_epoch must be positive");
        }
        if self.warmup_epochs >= self.epochs {
            return bad("warmup_epochs must be smaller than epochs");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub global_step: usize,
    pub lr: f64,
}

/// Linear warmup from 0 over `warmup_epochs` worth of steps, then cosine
/// decay that reaches 0 exactly at the final step.
pub fn lr_at(global_step: usize, cfg: &TrainConfig) -> Result<f64> {
    let total = cfg.total_steps();
    if global_step >= total {
        return Err(Error::Config(format!(
            "step {global_step} outside schedule of {total} steps"
        )));
    }
    let warm = cfg.warmup_epochs * cfg.steps_per_epoch;
    if global_step < warm {
        return Ok(cfg.base_lr * global_step as f64 / warm as f64);
    }
    let span = (total - warm).saturating_sub(1).max(1);
    let u = (global_step - warm) as f64 / span as f64;
    Ok((cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * u).cos())).max(0.0))
}

/// One training batch: `N` distinct train drivers with `M` records each.
/// Records are drawn without replacement while the driver has enough
/// videos.
pub fn sample_batch<'m, R: Rng + ?Sized>(
    manifest: &'m Manifest,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<(&'m VideoRecord, String)>> {
    let drivers: Vec<&str> = manifest.drivers(Split::Train).into_iter().collect();
    let n = cfg.n_identities_per_batch;
    let m = cfg.clips_per_identity;
    if drivers.len() < n {
        return Err(Error::Data(format!(
            "batch needs {n} train drivers but only {} exist",
            drivers.len()
        )));
    }
    let train = manifest.split_records(Split::Train);
    let mut batch = Vec::with_capacity(n * m);
    for d in sample_indices(rng, drivers.len(), n).into_iter() {
        let driver = drivers[d];
        let videos: Vec<&VideoRecord> =
            train.iter().copied().filter(|r| r.driver_id == driver).collect();
        let picks: Vec<usize> = if videos.len() >= m {
            sample_indices(rng, videos.len(), m).into_vec()
        } else {
            (0..m).map(|_| rng.random_range(0..videos.len())).collect()
        };
        batch.extend(picks.into_iter().map(|i| (videos[i], driver.to_string())));
    }
    Ok(batch)
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub wall_ms: f64,
    #[serde(skip)]
    pub clipped_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    /// Highest validation AUC, when a validation split exists.
    pub best_checkpoint: Option<PathBuf>,
    pub metrics_path: PathBuf,
    pub history: Vec<StepMetrics>,
    pub val_auc: Vec<Option<f64>>,
    pub model: Model<f32>,
}

impl TrainOutcome {
    /// The checkpoint to evaluate: best on validation if available.
    pub fn selected_checkpoint(&self) -> &Path {
        self.best_checkpoint.as_deref().unwrap_or(&self.final_checkpoint)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|m| m.loss).collect()
    }
}

struct StepContext<'a> {
    manifest: &'a Manifest,
    train_cfg: &'a TrainConfig,
    objective: &'a SupConConfig,
    sampler: SamplerConfig,
}

/// Runs the full recipe, writing `metrics.jsonl` and checkpoints under
/// `out_dir`.
pub fn train(
    manifest: &Manifest,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    objective: &SupConConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    objective.validate()?;
    if manifest.split_records(Split::Train).is_empty() {
        return Err(Error::Data("train split is empty".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let metrics_file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(metrics_file);

    let seed = train_cfg.seed;
    let mut model = Model::<f32>::new(model_cfg.clone(), seed)?;
    let mut optimizer = AdamW::new(train_cfg.weight_decay);
    let mut scaler = LossScaler::default();
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed_n(seed, "batches", &[]));
    let ctx = StepContext {
        manifest,
        train_cfg,
        objective,
        sampler: SamplerConfig {
            clip_length: model_cfg.clip_length,
            mode: SampleMode::TrainRandom,
            rng_seed: seed,
            frame_size: model_cfg.frame_size,
        },
    };
    let has_val = !manifest.split_records(Split::Val).is_empty();
    let manifest_hash = manifest.hash();
    let ckpt_root = out_dir.join("checkpoints");
    let mut history = Vec::with_capacity(train_cfg.total_steps());
    let mut val_auc = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(f64, PathBuf)> = None;
    let mut saved_epochs: Vec<PathBuf> = Vec::new();
    let start = Instant::now();

    for epoch in 0..train_cfg.epochs {
        for local in 0..train_cfg.steps_per_epoch {
            let step = epoch * train_cfg.steps_per_epoch + local;
            let lr = lr_at(step, train_cfg)?;
            let (loss, grad_norm, clipped) =
                train_step(&ctx, &mut model, &mut optimizer, &mut scaler, &mut batch_rng, step, lr)?;
            let m = StepMetrics {
                step,
                epoch,
                lr,
                loss,
                grad_norm,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                clipped_grad_norm: clipped,
            };
            let line = serde_json::to_string(&m).map_err(|e| Error::Serde(e.to_string()))?;
            writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
            log::debug!("step {step} loss {loss:.5} lr {lr:.2e} grad {grad_norm:.3}");
            history.push(m);
        }
        metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
        let meta = CheckpointMeta {
            schema_version: SCHEMA_VERSION,
            model_config: model_cfg.clone(),
            epoch: epoch + 1,
            rng_state: RngState {
                seed,
                global_step: ((epoch + 1) * train_cfg.steps_per_epoch) as u64,
            },
            manifest_hash: manifest_hash.clone(),
        };
        let dir = ckpt_root.join(format!("epoch_{:04}", epoch + 1));
        save_checkpoint(&mut model, &dir, &meta)?;
        saved_epochs.push(dir.clone());
        let auc = if has_val {
            match evaluate(manifest, &mut model, &EvalConfig { split: Split::Val, per_generator: false }) {
                Ok(r) => Some(r.mean_auc),
                Err(e @ Error::Data(_)) => {
                    log::warn!("validation skipped: {e}");
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        log::info!(
            "epoch {}/{} loss {:.4}{}",
            epoch + 1,
            train_cfg.epochs,
            history.last().map_or(f64::NAN, |m| m.loss),
            auc.map(|a| format!(" val_auc {a:.4}")).unwrap_or_default()
        );
        if let Some(a) = auc {
            if best.as_ref().is_none_or(|(b, _)| a > *b) {
                let best_dir = ckpt_root.join("best");
                save_checkpoint(&mut model, &best_dir, &meta)?;
                best = Some((a, best_dir));
            }
        }
        val_auc.push(auc);
        while saved_epochs.len() > train_cfg.keep_epoch_checkpoints.max(1) {
            let old = saved_epochs.remove(0);
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
    }
    let final_dir = ckpt_root.join("final");
    let meta = CheckpointMeta {
        schema_version: SCHEMA_VERSION,
        model_config: model_cfg.clone(),
        epoch: train_cfg.epochs,
        rng_state: RngState {
            seed,
            global_step: train_cfg.total_steps() as u64,
        },
        manifest_hash,
    };
    save_checkpoint(&mut model, &final_dir, &meta)?;
    model.set_train(false);
    Ok(TrainOutcome {
        final_checkpoint: final_dir,
        best_checkpoint: best.map(|(_, p)| p),
        metrics_path,
        history,
        val_auc,
        model,
    })
}

/// Returns `(loss, grad_norm_before_clip, grad_norm_after_clip)`.
fn train_step(
    ctx: &StepContext<'_>,
    model: &mut Model<f32>,
    optimizer: &mut AdamW,
    scaler: &mut LossScaler,
    batch_rng: &mut ChaCha8Rng,
    step: usize,
    lr: f64,
) -> Result<(f64, f64, f64)> {
    let cfg = ctx.train_cfg;
    let batch = sample_batch(ctx.manifest, cfg, batch_rng)?;
    let clips = batch
        .iter()
        .enumerate()
        .map(|(slot, (record, _))| {
            let mut rng = clip_rng(cfg.seed, step as u64, slot as u64);
            make_clip_with_rng(record, &ctx.sampler, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<&str> = batch.iter().map(|(_, l)| l.as_str()).collect();
    let views: Vec<ArrayView4<'_, f32>> = clips.iter().map(|c| c.view()).collect();

    let mixed = cfg.mixed_precision;
    let masters = mixed.then(|| {
        let mut saved = Vec::new();
        model.for_each_param(&mut |_, p: &mut Param<f32>| {
            saved.push(p.value.clone());
            round_to_half(&mut p.value);
        });
        saved
    });

    model.set_train(true);
    model.reseed_dropout(derive_seed_n(cfg.seed, "dropout", &[step as u64]));
    let embeddings = model.forward(&views)?.mapv(f64::from);
    let out = supcon_with_grad(embeddings.view(), &labels, ctx.objective)?;
    model.zero_grad();
    let loss_scale = if mixed { scaler.scale } else { 1.0 };
    model.backward(out.grad.mapv(|g| (g * loss_scale) as f32));

    if let Some(saved) = masters {
        let mut overflow = false;
        let inv = (1.0 / loss_scale) as f32;
        let mut it = saved.into_iter();
        model.for_each_param(&mut |_, p: &mut Param<f32>| {
            p.value = it.next().expect("same parameter order");
            round_to_half(&mut p.grad);
            overflow |= p.grad.iter().any(|g| !g.is_finite());
            p.grad.mapv_inplace(|g| g * inv);
        });
        scaler.update(overflow);
        if overflow {
            log::warn!("step {step}: half-precision overflow, loss scale now {}", scaler.scale);
            return Ok((out.loss, f64::NAN, 0.0));
        }
    }
    let grad_norm = clip_grad_norm(model, cfg.grad_clip_norm);
    if !out.loss.is_finite() || !grad_norm.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite training state at step {step}: loss {}, lr {lr:.3e}, grad norm {grad_norm}",
            out.loss
        )));
    }
    let clipped = global_grad_norm(model);
    optimizer.step(model, lr);
    Ok((out.loss, grad_norm, clipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(epochs: usize, spe: usize, warm: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            steps_per_epoch: spe,
            warmup_epochs: warm,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_examples() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c).unwrap(), 0.0);
        assert!((lr_at(500, &c).unwrap() - 5e-4).abs() < 1e-15);
        assert!(lr_at(c.total_steps() - 1, &c).unwrap() < 1e-6 * c.base_lr);
        assert!(lr_at(c.total_steps(), &c).is_err());
        let boundary = lr_at(1000, &c).unwrap();
        assert!((boundary - c.base_lr).abs() < 1e-15);
        assert!((lr_at(999, &c).unwrap() - c.base_lr).abs() < 2e-6);
    }

    #[test]
    fn schedule_without_warmup_and_tiny_runs() {
        let c = cfg(2, 5, 0);
        assert_eq!(lr_at(0, &c).unwrap(), c.base_lr);
        assert!(lr_at(9, &c).unwrap() < 1e-12);
        let c = cfg(1, 1, 0);
        assert_eq!(lr_at(0, &c).unwrap(), c.base_lr);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(cfg(5, 10, 5).validate().is_err());
        assert_eq!(TrainConfig::default().batch_size(), 128);
    }
}
