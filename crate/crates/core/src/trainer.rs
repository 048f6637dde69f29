//! Training: the batch objective, Adam, the step learning-rate schedule and
//! the epoch loop with periodic evaluation and best-model checkpoints.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use log::{info, warn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hsi::{add_gaussian_noise, derive_seed, extract_patches, HsiCube, NoiseSpec, PatchSpec};
use crate::metrics::{evaluate_pair, MetricsReport};
use crate::network::{denoise_tiled, save_checkpoint, SscanModel, DEFAULT_MARGIN};
use crate::tensor::{ParamStore, Tensor};

pub const BEST_CHECKPOINT: &str = "best.ssck";

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `store`.
    /// Parameters without a gradient are treated as having gradient zero.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::invalid(
                "optimizer",
                format!("state tracks {} parameters, store has {}", self.m.len(), store.len()),
            ));
        }
        for (_, p) in store.iter() {
            if let Some(g) = p.tensor.grad() {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("gradient of `{}` at index {i}", p.name),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.tensor.grad().map(<[f64]>::to_vec);
            let data = p.tensor.data_mut();
            for j in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                data[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales every accumulated gradient so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store
        .iter()
        .filter_map(|(_, p)| p.tensor.grad())
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in store.iter_mut() {
            if let Some(g) = p.tensor.grad().map(|g| g.iter().map(|v| v * (scale - 1.0)).collect::<Vec<_>>()) {
                p.tensor.accumulate_grad(&g).expect("same length");
            }
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// First epoch (1-based) trained at the decayed rate.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub patches_per_epoch: usize,
    /// Noise level and base seed; each patch of each epoch gets its own
    /// stream derived from this seed.
    pub noise: NoiseSpec,
    /// Base seed for patch positions.
    pub data_seed: u64,
    pub eval_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Max-norm gradient clipping; off by default.
    pub clip_norm: Option<f64>,
    /// Tile size for evaluation on large test cubes.
    pub eval_tile: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-4,
            decay_epoch: 50,
            decay_factor: 10.0,
            epochs: 100,
            batch_size: 16,
            patch_size: 40,
            patches_per_epoch: 2000,
            noise: NoiseSpec::new(25.0, 0),
            data_seed: 0,
            eval_every: 1,
            checkpoint_dir: None,
            clip_norm: None,
            eval_tile: None,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("decay_epoch", self.decay_epoch),
            ("batch_size", self.batch_size),
            ("patch_size", self.patch_size),
            ("patches_per_epoch", self.patches_per_epoch),
            ("eval_every", self.eval_every),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::invalid("lr", format!("{} must be positive", self.initial_lr)));
        }
        // Negated comparisons also reject NaN.
        if !(self.decay_factor > 1.0) {
            return Err(Error::invalid("decay_factor", "must exceed 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid("clip_norm", "must be positive"));
            }
        }
        if self.eval_tile == Some(0) {
            return Err(Error::invalid("tile", "must be positive"));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch: one drop by `decay_factor` at
/// `decay_epoch`, constant otherwise.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    if epoch >= config.decay_epoch {
        config.initial_lr / config.decay_factor
    } else {
        config.initial_lr
    }
}

/// One optimizer step on a `(noisy, clean)` batch. Returns the loss before
/// the update.
pub fn train_step(
    model: &mut SscanModel,
    state: &mut AdamState,
    noisy: &Tensor,
    clean: &Tensor,
    lr: f64,
    clip_norm: Option<f64>,
) -> Result<f64> {
    let (loss, grads) = model.loss_and_grads(noisy, clean)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: format!("training loss {loss}"),
        });
    }
    let store = model.params_mut();
    store.zero_grad();
    store.accumulate(&grads)?;
    if let Some(max) = clip_norm {
        clip_grad_norm(store, max);
    }
    state.step(store, lr)?;
    Ok(loss)
}

/// Runs one step per batch and returns the mean batch loss.
pub fn train_epoch<I>(
    model: &mut SscanModel,
    batches: I,
    state: &mut AdamState,
    lr: f64,
    clip_norm: Option<f64>,
) -> Result<f64>
where
    I: IntoIterator<Item = (Tensor, Tensor)>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for (noisy, clean) in batches {
        total += train_step(model, state, &noisy, &clean, lr, clip_norm)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("batches", "epoch has no batches"));
    }
    Ok(total / count as f64)
}

/// Trains on one fixed pair for `steps` updates at a constant rate and
/// returns the loss recorded at every step.
pub fn train_fixed_pair(
    model: &mut SscanModel,
    noisy: &Tensor,
    clean: &Tensor,
    steps: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    let mut state = AdamState::new(model.params());
    (0..steps)
        .map(|_| train_step(model, &mut state, noisy, clean, lr, None))
        .collect()
}

/// Freshly noised `(noisy, clean)` batches for one epoch. Patch positions
/// and every patch's noise stream are derived from the configured seeds and
/// the epoch number.
pub fn epoch_batches(train: &HsiCube, config: &TrainConfig, epoch: usize) -> Result<Vec<(Tensor, Tensor)>> {
    let patches = extract_patches(
        train,
        &PatchSpec {
            patch_size: config.patch_size,
            count: config.patches_per_epoch,
            seed: derive_seed(config.data_seed, epoch as u64),
        },
    )?;
    let epoch_noise = config.noise.reseeded(epoch as u64);
    let noisy = patches
        .par_iter()
        .enumerate()
        .map(|(i, p)| add_gaussian_noise(p, &epoch_noise.reseeded(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    patches
        .chunks(config.batch_size)
        .zip(noisy.chunks(config.batch_size))
        .map(|(clean, noisy)| {
            let clean: Vec<&HsiCube> = clean.iter().collect();
            let noisy: Vec<&HsiCube> = noisy.iter().collect();
            Ok((HsiCube::batch(&noisy)?, HsiCube::batch(&clean)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub wall_time: Duration,
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch and metrics of the best test MPSNR seen.
    pub best: Option<(usize, MetricsReport)>,
    pub best_checkpoint: Option<PathBuf>,
    /// Checkpoint writes that failed; training carried on.
    pub checkpoint_errors: Vec<String>,
}

impl TrainReport {
    /// One line per epoch: `epoch, lr, mean_loss[, mpsnr, mssim, sam, ergas]`.
    /// Values are written in shortest round-trip form, so two logs are
    /// equal exactly when the runs were.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            write!(out, "{}, {}, {}", r.epoch, r.lr, r.mean_loss).expect("write to string");
            if let Some(m) = &r.metrics {
                write!(out, ", {}, {}, {}, {}", m.mpsnr, m.mssim, m.sam, m.ergas).expect("write to string");
            }
            out.push('\n');
        }
        out
    }
}

fn evaluate(model: &SscanModel, clean: &HsiCube, noisy: &HsiCube, tile: Option<usize>) -> Result<MetricsReport> {
    let denoised = match tile {
        Some(t) => denoise_tiled(model, noisy, t, DEFAULT_MARGIN)?,
        None => model.denoise(noisy)?,
    };
    evaluate_pair(clean, &denoised)
}

/// Trains for `config.epochs` epochs on random patches of `train`, noised
/// afresh every epoch, and evaluates on the fixed `(test_clean, test_noisy)`
/// pair every `eval_every` epochs and after the last one. When a checkpoint
/// directory is set, the best-MPSNR model is written there as
/// [`BEST_CHECKPOINT`].
pub fn fit(
    model: &mut SscanModel,
    train: &HsiCube,
    test_clean: &HsiCube,
    test_noisy: &HsiCube,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    test_clean.same_dims(test_noisy)?;
    let mut report = TrainReport::default();
    if config.epochs == 0 {
        return Ok(report);
    }
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut state = AdamState::new(model.params());
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let lr = lr_at(config, epoch);
        let batches = epoch_batches(train, config, epoch)?;
        let mean_loss = train_epoch(model, batches, &mut state, lr, config.clip_norm)?;
        let metrics = if epoch % config.eval_every == 0 || epoch == config.epochs {
            Some(evaluate(model, test_clean, test_noisy, config.eval_tile)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            lr,
            mean_loss,
            wall_time: start.elapsed(),
            metrics,
        };
        match &metrics {
            Some(m) => info!("epoch {epoch} lr {lr:e} loss {mean_loss:.6e} {m}"),
            None => info!("epoch {epoch} lr {lr:e} loss {mean_loss:.6e}"),
        }
        if let Some(m) = metrics {
            if report.best.is_none_or(|(_, b)| m.mpsnr > b.mpsnr) {
                report.best = Some((epoch, m));
                if let Some(dir) = &config.checkpoint_dir {
                    let path = dir.join(BEST_CHECKPOINT);
                    match save_checkpoint(model, &path) {
                        Ok(()) => report.best_checkpoint = Some(path),
                        Err(e) => {
                            warn!("checkpoint write failed at epoch {epoch}: {e}");
                            report.checkpoint_errors.push(format!("epoch {epoch}: {e}"));
                        }
                    }
                }
            }
        }
        report.epochs.push(record);
    }
    Ok(report)
}
