//! `adk bench`: wall-time statistics for the full forward pass and for
//! kernel application alone.

use std::path::PathBuf;
use std::time::Instant;

use adk::checkpoint::load_model;
use adk::model::{build, ModelConfig};
use adk::tensor::Tensor;
use anyhow::{bail, Result};
use clap::Args;
use serde::Serialize;

use crate::cfgfile::{resolve, resolve_opt, FileCfg};
use crate::util::median_p95;

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Key=value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to benchmark [default: a freshly initialized model]
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Downscale factor of the fresh model [default: 2; ignored with --ckpt]
    #[arg(long)]
    scale: Option<usize>,
    /// Feature width of the fresh model [default: 64; ignored with --ckpt]
    #[arg(long)]
    width: Option<usize>,
    /// Square input side length [default: 128]
    #[arg(long)]
    size: Option<usize>,
    /// Timed iterations per measurement [default: 10]
    #[arg(long)]
    iters: Option<usize>,
    /// Seed for the synthetic input image [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct Stat {
    median: f64,
    p95: f64,
}

#[derive(Serialize)]
struct BenchReport {
    size: usize,
    scale: usize,
    kernel_size: usize,
    iters: usize,
    forward_ms: Stat,
    apply_kernels_ms: Stat,
}

pub fn run(args: BenchArgs) -> Result<()> {
    let mut f = FileCfg::load(args.config.as_deref())?;
    let ckpt = resolve_opt(args.ckpt, f.take("ckpt")?);
    let scale = resolve(args.scale, f.take("scale")?, 2);
    let width = resolve(args.width, f.take("width")?, 64);
    let size = resolve(args.size, f.take("size")?, 128);
    let iters = resolve(args.iters, f.take("iters")?, 10);
    let seed = resolve(args.seed, f.take("seed")?, 0);
    f.finish()?;
    if iters == 0 {
        bail!("--iters must be at least 1");
    }

    let params = match &ckpt {
        Some(path) => load_model(path)?,
        None => build::<f32>(&ModelConfig {
            feature_width: width,
            seed,
            ..ModelConfig::new(scale)
        })?,
    };
    let scale = params.config().scale;
    let k = params.config().kernel_size;
    if size % scale != 0 || size < k {
        bail!("--size must be a multiple of scale {scale} and at least kernel size {k}");
    }

    let input = Tensor::<f32>::from_fn(vec![size, size, 3], |i| {
        let h = (i[0] as u64)
            .wrapping_mul(0x9E37_79B1)
            .wrapping_add((i[1] as u64).wrapping_mul(0x85EB_CA77))
            .wrapping_add((i[2] as u64).wrapping_mul(0xC2B2_AE3D))
            .wrapping_add(seed.wrapping_mul(0x27D4_EB2F));
        (h % 65_536) as f32 / 65_535.0
    })?;

    // Warmup run, reused as the kernel field for the apply-only loop.
    let (_, field) = params.forward(&input)?;
    let mut forward_ms = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        let _ = params.forward(&input)?;
        forward_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let _ = field.apply(&input, scale)?;
    let mut apply_ms = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        let _ = field.apply(&input, scale)?;
        apply_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }

    let (fm, fp) = median_p95(&forward_ms);
    let (am, ap) = median_p95(&apply_ms);
    println!(
        "forward       {size}x{size} at x{scale} (k = {k}): median {fm:.3} ms, p95 {fp:.3} ms \
         over {iters} iters"
    );
    println!(
        "apply_kernels {size}x{size} at x{scale} (k = {k}): median {am:.3} ms, p95 {ap:.3} ms \
         over {iters} iters"
    );
    let report = BenchReport {
        size,
        scale,
        kernel_size: k,
        iters,
        forward_ms: Stat { median: fm, p95: fp },
        apply_kernels_ms: Stat { median: am, p95: ap },
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
