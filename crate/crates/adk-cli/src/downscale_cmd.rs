//! `adk downscale`: run one PNG through a trained model, optionally
//! exporting the spatially averaged kernel of each color stream.

use std::path::{Path, PathBuf};

use adk::checkpoint::load_model;
use adk::data::{load_png, save_gray_png, save_png};
use adk::model::{Channel, KernelField};
use adk::tensor::Tensor;
use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use crate::cfgfile::{resolve_opt, FileCfg};

#[derive(Args, Debug)]
pub struct DownscaleArgs {
    /// Key=value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model checkpoint to run
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Input PNG (auto-cropped to the largest scale-divisible region)
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output PNG path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for kernel maps: per-channel PNGs plus kernels.json
    #[arg(long)]
    dump_kernels: Option<PathBuf>,
}

/// Raw spatially-averaged kernels, one `k x k` row-major matrix per stream.
#[derive(Serialize)]
struct KernelDump {
    scale: usize,
    kernel_size: usize,
    r: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

pub fn run(args: DownscaleArgs) -> Result<()> {
    let mut f = FileCfg::load(args.config.as_deref())?;
    let ckpt = resolve_opt(args.ckpt, f.take("ckpt")?);
    let input = resolve_opt(args.input, f.take("in")?);
    let out = resolve_opt(args.out, f.take("out")?);
    let dump_kernels = resolve_opt(args.dump_kernels, f.take("dump_kernels")?);
    f.finish()?;
    let Some(ckpt) = ckpt else { bail!("--ckpt is required") };
    let Some(input) = input else { bail!("--in is required") };
    let Some(out) = out else { bail!("--out is required") };

    let params = load_model(&ckpt)?;
    let scale = params.config().scale;
    let k = params.config().kernel_size;
    let hr = load_png(&input)?;
    let (h, w) = (hr.shape()[0], hr.shape()[1]);
    let (ch, cw) = (h - h % scale, w - w % scale);
    if ch < k || cw < k {
        bail!(
            "{}: {h}x{w} leaves a {ch}x{cw} scale-divisible region, smaller than \
             the model's {k}x{k} kernels",
            input.display()
        );
    }
    let hr = if (ch, cw) != (h, w) {
        eprintln!(
            "note: cropped input from {h}x{w} to {ch}x{cw}, the largest region \
             divisible by scale {scale}"
        );
        Tensor::from_fn(vec![ch, cw, 3], |i| hr.get(i))?
    } else {
        hr
    };

    let (lr, field) = params.forward(&hr)?;
    save_png(&out, &lr)?;
    println!(
        "wrote {} ({}x{} from {ch}x{cw} at x{scale})",
        out.display(),
        lr.shape()[0],
        lr.shape()[1]
    );

    if let Some(dir) = dump_kernels {
        dump(&field, scale, k, &dir)?;
        println!("wrote kernel maps to {}", dir.display());
    }
    Ok(())
}

/// Average each stream's kernels over all spatial positions, then write the
/// raw values as JSON and a [0, 1]-normalized grayscale PNG per stream.
fn dump(field: &KernelField<f32>, scale: usize, k: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating kernel dump directory {}", dir.display()))?;
    let mut averaged: Vec<Vec<Vec<f64>>> = Vec::with_capacity(3);
    for channel in Channel::ALL {
        let per_pixel = field.channel(channel);
        let positions = per_pixel.len() / (k * k);
        let mut mean = vec![0.0f64; k * k];
        for slice in per_pixel.data().chunks_exact(k * k) {
            for (m, &v) in mean.iter_mut().zip(slice) {
                *m += v as f64;
            }
        }
        for m in &mut mean {
            *m /= positions as f64;
        }

        let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        let png = Tensor::new(
            vec![k, k],
            mean.iter().map(|&v| ((v - lo) / span) as f32).collect(),
        )?;
        let name = match channel {
            Channel::R => "kernel_r.png",
            Channel::G => "kernel_g.png",
            Channel::B => "kernel_b.png",
        };
        save_gray_png(&dir.join(name), &png)?;
        averaged.push(mean.chunks_exact(k).map(<[f64]>::to_vec).collect());
    }
    let [r, g, b] = <[_; 3]>::try_from(averaged).expect("three color streams");
    let json = serde_json::to_string_pretty(&KernelDump {
        scale,
        kernel_size: k,
        r,
        g,
        b,
    })?;
    std::fs::write(dir.join("kernels.json"), json)
        .with_context(|| format!("writing {}", dir.join("kernels.json").display()))?;
    Ok(())
}
