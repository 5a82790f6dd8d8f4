//! `adk ablate`: train every model/normalization variant under one shared
//! step budget and seed, then report final validation quality side by side.

use std::path::PathBuf;

use adk::data::split_train_val;
use adk::model::{build, ModelConfig, NormMode, Variant};
use adk::train::{self, TrainConfig, TrainState};
use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use crate::cfgfile::{resolve, resolve_opt, FileCfg};
use crate::util;

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Key=value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest file (hr_dir=..., lr_dir=..., scale=...)
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Generate synthetic pairs with this filter: nearest|box|bicubic|lanczos3
    #[arg(long)]
    synth: Option<String>,
    /// Synthetic pair count [default: 32]
    #[arg(long)]
    count: Option<usize>,
    /// Synthetic HR side length [default: 96]
    #[arg(long)]
    hr_size: Option<usize>,
    /// Downscale factor [default: 2; taken from the manifest in manifest mode]
    #[arg(long)]
    scale: Option<usize>,
    /// Optimizer-step budget shared by every row [default: 120]
    #[arg(long)]
    budget: Option<u64>,
    /// Feature width of every model [default: 16]
    #[arg(long)]
    width: Option<usize>,
    /// Initial learning rate [default: 1e-3]
    #[arg(long)]
    lr: Option<f32>,
    /// Mini-batch size [default: 4]
    #[arg(long)]
    batch: Option<usize>,
    /// HR crop side length [default: 48, clamped to the smallest image]
    #[arg(long)]
    patch: Option<usize>,
    /// Seed shared by every row [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Write line-delimited JSON records here in addition to the table
    #[arg(long)]
    out: Option<PathBuf>,
}

const ROWS: [(&str, Variant, NormMode); 6] = [
    ("full", Variant::Full, NormMode::MinMaxSum),
    ("shared_trunk", Variant::SharedTrunk, NormMode::MinMaxSum),
    ("single_stream", Variant::SingleStream, NormMode::MinMaxSum),
    ("simple_gen", Variant::SimpleGen, NormMode::MinMaxSum),
    ("sum_only", Variant::Full, NormMode::SumOnly),
    ("minmax_only", Variant::Full, NormMode::MinMaxOnly),
];

#[derive(Serialize)]
struct AblateRecord {
    row: &'static str,
    variant: String,
    norm_mode: String,
    seed: u64,
    budget_steps: u64,
    train_loss: Option<f64>,
    val_l1: Option<f64>,
    val_psnr: Option<f64>,
    error: Option<String>,
}

pub fn run(args: AblateArgs) -> Result<()> {
    let mut f = FileCfg::load(args.config.as_deref())?;
    let manifest = resolve_opt(args.manifest, f.take("manifest")?);
    let synth: Option<String> = resolve_opt(args.synth, f.take("synth")?);
    let count = resolve(args.count, f.take("count")?, 32);
    let hr_size = resolve(args.hr_size, f.take("hr_size")?, 96);
    let scale_flag = resolve_opt(args.scale, f.take("scale")?);
    let budget = resolve(args.budget, f.take("budget")?, 120u64);
    let width = resolve(args.width, f.take("width")?, 16);
    let lr = resolve(args.lr, f.take("lr")?, 1e-3);
    let batch = resolve(args.batch, f.take("batch")?, 4);
    let patch = resolve(args.patch, f.take("patch")?, 48);
    let seed = resolve(args.seed, f.take("seed")?, 0);
    let out = resolve_opt(args.out, f.take("out")?);
    f.finish()?;

    let (dataset, scale) = util::load_dataset(
        manifest.as_deref(),
        synth.as_deref(),
        count,
        hr_size,
        scale_flag,
        seed,
    )?;
    let kernel_size = 2 * scale + 1;
    let patch = util::clamp_patch(patch, &dataset, scale, kernel_size)?;
    let (train_set, val_set) = split_train_val(dataset);

    // Whole epochs only, so every row takes the identical number of steps.
    let steps_per_epoch = (train_set.len() as u64).div_ceil(batch as u64);
    let epochs = budget.div_ceil(steps_per_epoch).max(1) as usize;
    let steps = epochs as u64 * steps_per_epoch;
    println!(
        "ablation at x{scale}: {} train / {} val pairs, {epochs} epochs = {steps} steps \
         per row (budget {budget}), seed {seed}",
        train_set.len(),
        val_set.len()
    );

    let train_cfg = TrainConfig {
        lr0: lr,
        batch,
        patch,
        seed,
        ..TrainConfig::new()
    };
    let mut results: Vec<AblateRecord> = Vec::with_capacity(ROWS.len());
    for (row, variant, norm_mode) in ROWS {
        let model_cfg = ModelConfig {
            feature_width: width,
            variant,
            norm_mode,
            seed,
            ..ModelConfig::new(scale)
        };
        let outcome = build::<f32>(&model_cfg)
            .map_err(anyhow::Error::from)
            .and_then(|params| {
                let mut state = TrainState::new(params, &train_cfg);
                let records = train::train_epochs(
                    &mut state,
                    &train_set,
                    &val_set,
                    &train_cfg,
                    epochs,
                    |_| {},
                )?;
                let last = records.last().context("at least one epoch")?;
                Ok((last.train_loss, last.val_loss, last.val_psnr))
            });
        let record = match outcome {
            Ok((train_loss, val_l1, val_psnr)) => AblateRecord {
                row,
                variant: variant.to_string(),
                norm_mode: norm_mode.to_string(),
                seed,
                budget_steps: steps,
                train_loss: Some(train_loss),
                val_l1,
                val_psnr,
                error: None,
            },
            Err(e) => AblateRecord {
                row,
                variant: variant.to_string(),
                norm_mode: norm_mode.to_string(),
                seed,
                budget_steps: steps,
                train_loss: None,
                val_l1: None,
                val_psnr: None,
                error: Some(format!("{e:#}")),
            },
        };
        println!(
            "  finished {row}: val L1 {}",
            record
                .val_l1
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "n/a".to_string())
        );
        results.push(record);
    }

    println!();
    println!(
        "{:<14} {:<14} {:<12} {:>10} {:>10} {:>9}",
        "row", "variant", "norm_mode", "train_l1", "val_l1", "val_psnr"
    );
    for r in &results {
        match &r.error {
            Some(e) => println!(
                "{:<14} {:<14} {:<12} failed: {e}",
                r.row, r.variant, r.norm_mode
            ),
            None => println!(
                "{:<14} {:<14} {:<12} {:>10.6} {:>10} {:>9}",
                r.row,
                r.variant,
                r.norm_mode,
                r.train_loss.unwrap_or(f64::NAN),
                r.val_l1
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_else(|| "n/a".to_string()),
                r.val_psnr
                    .map(util::fmt_db)
                    .unwrap_or_else(|| "n/a".to_string()),
            ),
        }
    }

    let full = results.iter().find(|r| r.row == "full").and_then(|r| r.val_l1);
    let single = results
        .iter()
        .find(|r| r.row == "single_stream")
        .and_then(|r| r.val_l1);
    if let (Some(full), Some(single)) = (full, single) {
        if full <= single {
            println!(
                "per-channel kernels helped here: full val L1 {full:.6} <= \
                 single_stream {single:.6}"
            );
        } else {
            println!(
                "observation: single_stream val L1 {single:.6} beat full {full:.6} \
                 under this budget — direction can flip on easy synthetic tasks"
            );
        }
    }

    if let Some(path) = out {
        let mut text = String::new();
        for r in &results {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {} records to {}", results.len(), path.display());
    }
    Ok(())
}
