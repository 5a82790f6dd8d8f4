//! `adk train`: fit a downscaling model on paired or synthetic data.

use std::cell::RefCell;
use std::io::Write;
use std::path::PathBuf;

use adk::checkpoint::save_model;
use adk::model::{build, ModelConfig, NormMode, Variant};
use adk::train::{self, TrainConfig};
use anyhow::{Context, Result};
use clap::Args;

use crate::cfgfile::{resolve, resolve_opt, FileCfg};
use crate::util;

#[derive(Args, Debug)]
pub struct TrainArgs {
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
    /// Model variant: full|shared_trunk|single_stream|simple_gen [default: full]
    #[arg(long)]
    variant: Option<Variant>,
    /// Kernel normalization: minmax_sum|sum_only|minmax_only [default: minmax_sum]
    #[arg(long)]
    norm_mode: Option<NormMode>,
    /// Feature width (channels) of every stage [default: 64]
    #[arg(long)]
    width: Option<usize>,
    /// Kernel side length, odd [default: 2*scale + 1]
    #[arg(long)]
    kernel_size: Option<usize>,
    /// Training epochs [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate [default: 1e-4]
    #[arg(long)]
    lr: Option<f32>,
    /// Mini-batch size [default: 4]
    #[arg(long)]
    batch: Option<usize>,
    /// HR crop side length [default: 192, clamped to the smallest image]
    #[arg(long)]
    patch: Option<usize>,
    /// Seed for init, shuffling, crops, and augmentation [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Run validation every N epochs [default: 1]
    #[arg(long)]
    eval_every: Option<usize>,
    /// Output directory for checkpoints and train.jsonl [default: adk-out]
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut f = FileCfg::load(args.config.as_deref())?;
    let manifest = resolve_opt(args.manifest, f.take("manifest")?);
    let synth: Option<String> = resolve_opt(args.synth, f.take("synth")?);
    let count = resolve(args.count, f.take("count")?, 32);
    let hr_size = resolve(args.hr_size, f.take("hr_size")?, 96);
    let scale_flag = resolve_opt(args.scale, f.take("scale")?);
    let variant = resolve(args.variant, f.take("variant")?, Variant::Full);
    let norm_mode = resolve(args.norm_mode, f.take("norm_mode")?, NormMode::MinMaxSum);
    let width = resolve(args.width, f.take("width")?, 64);
    let kernel_size = resolve_opt(args.kernel_size, f.take("kernel_size")?);
    let epochs = resolve(args.epochs, f.take("epochs")?, 100);
    let lr = resolve(args.lr, f.take("lr")?, 1e-4);
    let batch = resolve(args.batch, f.take("batch")?, 4);
    let patch = resolve(args.patch, f.take("patch")?, 192);
    let seed = resolve(args.seed, f.take("seed")?, 0);
    let eval_every = resolve(args.eval_every, f.take("eval_every")?, 1);
    let out = resolve(args.out, f.take("out")?, PathBuf::from("adk-out"));
    f.finish()?;

    let (dataset, scale) = util::load_dataset(
        manifest.as_deref(),
        synth.as_deref(),
        count,
        hr_size,
        scale_flag,
        seed,
    )?;

    let mut model_cfg = ModelConfig {
        feature_width: width,
        variant,
        norm_mode,
        seed,
        ..ModelConfig::new(scale)
    };
    if let Some(k) = kernel_size {
        model_cfg.kernel_size = k;
    }
    let patch = util::clamp_patch(patch, &dataset, scale, model_cfg.kernel_size)?;
    let train_cfg = TrainConfig {
        lr0: lr,
        epochs,
        batch,
        patch,
        seed,
        eval_every,
        checkpoint_dir: Some(out.clone()),
        ..TrainConfig::new()
    };

    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    let log_path = out.join("train.jsonl");
    let log = RefCell::new(std::io::BufWriter::new(
        std::fs::File::create(&log_path)
            .with_context(|| format!("creating {}", log_path.display()))?,
    ));

    let params = build::<f32>(&model_cfg)?;
    println!(
        "training {} ({} parameters) on {} pairs at x{scale}, patch {patch}, batch {batch}",
        model_cfg.variant,
        params.param_count(),
        dataset.len()
    );
    let (state, records) = train::train_with(params, dataset, &train_cfg, |rec| {
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        writeln!(log.borrow_mut(), "{line}").expect("writing train log");
        match (rec.val_loss, rec.val_psnr) {
            (Some(l1), Some(db)) => println!(
                "epoch {:>4}  step {:>6}  train L1 {:.6}  val L1 {l1:.6}  val PSNR {}  lr {:.2e}",
                rec.epoch,
                rec.step,
                rec.train_loss,
                util::fmt_db(db),
                rec.lr
            ),
            _ => println!(
                "epoch {:>4}  step {:>6}  train L1 {:.6}  lr {:.2e}",
                rec.epoch, rec.step, rec.train_loss, rec.lr
            ),
        }
    })?;
    log.borrow_mut().flush().expect("flushing train log");

    let model_path = out.join("model.ckpt");
    save_model(&state.params, &model_path)?;
    let best = records
        .iter()
        .filter_map(|r| r.val_loss)
        .fold(f64::INFINITY, f64::min);
    println!(
        "done: {} epochs, {} steps; best val L1 {}; wrote {} and {}",
        state.epoch,
        state.step,
        if best.is_finite() {
            format!("{best:.6}")
        } else {
            "n/a".to_string()
        },
        model_path.display(),
        log_path.display()
    );
    Ok(())
}
