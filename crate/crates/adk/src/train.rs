//! Supervised training: per-epoch shuffle/crop/augment batching, L1 loss,
//! Adam updates, plateau learning-rate scheduling, validation, and
//! checkpointing.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint;
use crate::data::{self, PairedSample};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics;
use crate::model::ModelParams;
use crate::optim::{AdamState, PlateauSchedule};
use crate::tensor::{Scalar, Tensor};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Initial learning rate.
    pub lr0: f32,
    /// Epochs without validation improvement before the rate is reduced.
    pub plateau_patience: u32,
    /// Multiplier applied to the rate on a plateau (in `(0, 1)`).
    pub plateau_factor: f32,
    /// Lower bound for the learning rate.
    pub min_lr: f32,
    pub epochs: usize,
    pub batch: usize,
    /// HR patch side length for training crops.
    pub patch: usize,
    pub seed: u64,
    /// Run validation every this many epochs (the final epoch always runs it).
    pub eval_every: usize,
    /// When set, `last.ckpt` (every epoch) and `best.ckpt` (on improvement)
    /// are written here.
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new() -> Self {
        TrainConfig {
            lr0: 1e-4,
            plateau_patience: 10,
            plateau_factor: 0.5,
            min_lr: 1e-6,
            epochs: 100,
            batch: 4,
            patch: 192,
            seed: 0,
            eval_every: 1,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config(format!(
                "plateau_factor must lie in (0, 1), got {}",
                self.plateau_factor
            )));
        }
        if !(self.lr0 > self.min_lr) {
            return Err(Error::Config(format!(
                "lr0 ({}) must exceed min_lr ({})",
                self.lr0, self.min_lr
            )));
        }
        if self.batch == 0 || self.epochs == 0 || self.eval_every == 0 || self.patch == 0 {
            return Err(Error::Config(
                "batch, epochs, eval_every, and patch must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::new()
    }
}

/// Everything a run needs to continue exactly where it stopped: parameters,
/// optimizer moments, schedule, counters, and the RNG.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub opt: AdamState<f32>,
    pub schedule: PlateauSchedule,
    pub epoch: u64,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(params: ModelParams<f32>, config: &TrainConfig) -> Self {
        let opt = AdamState::new(params.named_params().into_iter().map(|(_, t)| t));
        TrainState {
            params,
            opt,
            schedule: PlateauSchedule::new(
                config.lr0,
                config.plateau_patience,
                config.plateau_factor,
                config.min_lr,
            ),
            epoch: 0,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub step: u64,
    pub train_loss: f64,
    /// Present on epochs where validation ran.
    pub val_loss: Option<f64>,
    pub val_psnr: Option<f64>,
    /// Learning rate used during this epoch's updates.
    pub lr: f32,
}

/// Mean absolute difference over all elements, accumulated at 64-bit.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "l1_loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Mean validation L1 and PSNR over full (uncropped) pairs; `None` when the
/// split is empty.
pub fn validate(params: &ModelParams<f32>, val_set: &[PairedSample]) -> Result<Option<(f64, f64)>> {
    if val_set.is_empty() {
        return Ok(None);
    }
    let mut loss_sum = 0.0;
    let mut psnr_sum = 0.0;
    for pair in val_set {
        let (pred, _) = params.forward(&pair.hr)?;
        loss_sum += l1_loss(&pred, &pair.lr)?;
        psnr_sum += metrics::psnr(&pred, &pair.lr, 1.0)?;
    }
    let n = val_set.len() as f64;
    Ok(Some((loss_sum / n, psnr_sum / n)))
}

/// One pass over the training pairs: shuffle once, then for each batch draw
/// a random aligned crop and augmentation per sample, accumulate gradients,
/// and take one Adam step per batch. Returns the mean per-batch loss.
///
/// RNG consumption order is fixed — shuffle, then per sample in batch order:
/// crop row, crop column, flip, rotation — so identical seeds give identical
/// trajectories.
pub fn run_epoch(
    state: &mut TrainState,
    train_set: &[PairedSample],
    config: &TrainConfig,
) -> Result<f64> {
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let scale = state.params.config().scale;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut state.rng);
    let lr = state.schedule.lr() as f64;
    let mut loss_total = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(config.batch) {
        let mut grad_acc: Vec<Tensor<f32>> = state
            .params
            .named_params()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()).expect("param shape is valid"))
            .collect();
        let mut batch_loss = 0.0;
        for &idx in chunk {
            let cropped = data::crop_pair(&train_set[idx], scale, config.patch, &mut state.rng)?;
            let op = data::AugmentOp::sample(&mut state.rng);
            let sample = data::augment(&cropped, op)?;
            let mut g = Graph::new();
            let bound = state.params.bind(&mut g, true)?;
            let x = g.input(sample.hr)?;
            let nodes = bound.forward(&mut g, x)?;
            let target = g.input(sample.lr)?;
            let loss = g.l1_loss(nodes.output, target)?;
            let loss_val = g.value(loss).data()[0] as f64;
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite training loss {loss_val} at epoch {} step {} (sample {})",
                    state.epoch + 1,
                    state.step + 1,
                    train_set[idx].id
                )));
            }
            batch_loss += loss_val;
            let ids = bound.param_ids();
            let mut grads = g.backward(loss)?;
            for (acc, id) in grad_acc.iter_mut().zip(ids) {
                if let Some(gt) = grads.take(id) {
                    *acc = acc.add(&gt)?;
                }
            }
        }
        let inv = 1.0 / chunk.len() as f32;
        for acc in &mut grad_acc {
            *acc = acc.mul_scalar(inv);
        }
        state.opt.step(
            state.params.named_params_mut().into_iter().map(|(_, t)| t),
            &grad_acc,
            lr,
        )?;
        state.step += 1;
        loss_total += batch_loss / chunk.len() as f64;
        batches += 1;
    }
    state.epoch += 1;
    Ok(loss_total / batches as f64)
}

/// Run `epochs` epochs on an existing state, validating per `eval_every`
/// (and always on the final epoch), adjusting the learning rate on
/// plateaus, and writing `last.ckpt`/`best.ckpt` when a checkpoint
/// directory is configured. `on_epoch` sees each record as it is produced.
pub fn train_epochs(
    state: &mut TrainState,
    train_set: &[PairedSample],
    val_set: &[PairedSample],
    config: &TrainConfig,
    epochs: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.clone(), e))?;
    }
    let mut records = Vec::with_capacity(epochs);
    for i in 0..epochs {
        let lr_used = state.schedule.lr();
        let train_loss = run_epoch(state, train_set, config)?;
        let is_last = i + 1 == epochs;
        let evaluated = if state.epoch % config.eval_every as u64 == 0 || is_last {
            validate(&state.params, val_set)?
        } else {
            None
        };
        let mut improved = false;
        if let Some((val_loss, _)) = evaluated {
            improved = state
                .schedule
                .best()
                .is_none_or(|b| (val_loss as f32) < b);
            state.schedule.observe(val_loss as f32);
        }
        if let Some(dir) = &config.checkpoint_dir {
            checkpoint::save_train_state(state, &dir.join("last.ckpt"))?;
            if improved {
                checkpoint::save_train_state(state, &dir.join("best.ckpt"))?;
            }
        }
        let record = EpochRecord {
            epoch: state.epoch,
            step: state.step,
            train_loss,
            val_loss: evaluated.map(|(l, _)| l),
            val_psnr: evaluated.map(|(_, p)| p),
            lr: lr_used,
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}

fn check_dataset(
    params: &ModelParams<f32>,
    dataset: &[PairedSample],
    config: &TrainConfig,
) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    let mc = params.config();
    if config.patch % mc.scale != 0 {
        return Err(Error::Config(format!(
            "patch {} is not a multiple of scale {}",
            config.patch, mc.scale
        )));
    }
    if config.patch < mc.kernel_size {
        return Err(Error::Config(format!(
            "patch {} is smaller than the model's kernel size {}",
            config.patch, mc.kernel_size
        )));
    }
    for pair in dataset {
        pair.validate(mc.scale)?;
        let (h, w) = (pair.hr.shape()[0], pair.hr.shape()[1]);
        if config.patch > h || config.patch > w {
            return Err(Error::Data(format!(
                "{}: patch {} exceeds image extents {h}x{w}",
                pair.id, config.patch
            )));
        }
        if h < mc.kernel_size || w < mc.kernel_size {
            return Err(Error::Data(format!(
                "{}: image {h}x{w} is smaller than the model's kernel size {}",
                pair.id, mc.kernel_size
            )));
        }
    }
    Ok(())
}

/// Full training entry point: validate inputs, split off validation pairs,
/// and run `config.epochs` epochs from fresh optimizer state.
pub fn train_with(
    params: ModelParams<f32>,
    dataset: Vec<PairedSample>,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(TrainState, Vec<EpochRecord>)> {
    config.validate()?;
    check_dataset(&params, &dataset, config)?;
    let (train_set, val_set) = data::split_train_val(dataset);
    let mut state = TrainState::new(params, config);
    let records = train_epochs(&mut state, &train_set, &val_set, config, config.epochs, on_epoch)?;
    Ok((state, records))
}

/// [`train_with`] without an epoch callback.
pub fn train(
    params: ModelParams<f32>,
    dataset: Vec<PairedSample>,
    config: &TrainConfig,
) -> Result<(TrainState, Vec<EpochRecord>)> {
    train_with(params, dataset, config, |_| {})
}
