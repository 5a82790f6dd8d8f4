//! `adk eval`: score predicted downscales — and classical baselines —
//! against ground truth, per image and on average.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adk::checkpoint::load_model;
use adk::data::{self, load_png};
use adk::metrics::{psnr, rgb_to_y, ssim};
use adk::resample::{bicubic_upscale, classic_downscale, ClassicMethod};
use adk::tensor::Tensor;
use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use crate::cfgfile::{resolve, resolve_opt, FileCfg};
use crate::util::fmt_db;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Key=value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of predicted LR PNGs (matched to --gt-dir by file name)
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    /// Model checkpoint (predictions computed from the manifest's HR images)
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Dataset manifest naming the HR and ground-truth LR directories
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Ground-truth LR directory (with --pred-dir)
    #[arg(long)]
    gt_dir: Option<PathBuf>,
    /// HR directory for baselines and round-trip mode (with --pred-dir)
    #[arg(long)]
    hr_dir: Option<PathBuf>,
    /// Score bicubic-upscaled LR against the HR original instead of LR vs LR
    #[arg(long, num_args(0..=1), default_missing_value = "true")]
    round_trip: Option<bool>,
    /// Write line-delimited JSON records here in addition to the table
    #[arg(long)]
    out: Option<PathBuf>,
}

struct EvalItem {
    name: String,
    hr: Tensor<f32>,
    gt: Tensor<f32>,
    pred: Tensor<f32>,
}

#[derive(Serialize)]
struct EvalRecord {
    image: String,
    method: String,
    /// `lr` = prediction vs ground-truth LR; `round_trip` = bicubic-upscaled
    /// prediction vs the HR original. Non-finite PSNR (identical images)
    /// serializes as `null`.
    mode: &'static str,
    psnr_rgb: f64,
    ssim_rgb: f64,
    psnr_y: f64,
    ssim_y: f64,
}

const BASELINES: [(&str, ClassicMethod); 4] = [
    ("nearest", ClassicMethod::Nearest),
    ("box", ClassicMethod::Box),
    ("bicubic", ClassicMethod::Bicubic),
    ("lanczos3", ClassicMethod::Lanczos3),
];

pub fn run(args: EvalArgs) -> Result<()> {
    let mut f = FileCfg::load(args.config.as_deref())?;
    let pred_dir = resolve_opt(args.pred_dir, f.take("pred_dir")?);
    let ckpt = resolve_opt(args.ckpt, f.take("ckpt")?);
    let manifest = resolve_opt(args.manifest, f.take("manifest")?);
    let gt_dir = resolve_opt(args.gt_dir, f.take("gt_dir")?);
    let hr_dir = resolve_opt(args.hr_dir, f.take("hr_dir")?);
    let round_trip = resolve(args.round_trip, f.take("round_trip")?, false);
    let out = resolve_opt(args.out, f.take("out")?);
    f.finish()?;

    let (items, scale, pred_label) = match (&pred_dir, &ckpt, &manifest) {
        (Some(pred), None, None) => {
            let Some(gt) = &gt_dir else {
                bail!("--gt-dir is required with --pred-dir")
            };
            let Some(hr) = &hr_dir else {
                bail!("--hr-dir is required with --pred-dir (baselines and round-trip \
                       mode score against the HR originals)")
            };
            load_pred_items(pred, gt, hr)?
        }
        (None, Some(ckpt), Some(manifest)) => {
            if gt_dir.is_some() || hr_dir.is_some() {
                bail!("--gt-dir/--hr-dir apply only to --pred-dir mode; the manifest \
                       already names both directories");
            }
            load_model_items(ckpt, manifest)?
        }
        _ => bail!("provide either --pred-dir (with --gt-dir and --hr-dir) or \
                    --ckpt with --manifest"),
    };
    if items.is_empty() {
        bail!("no images to evaluate");
    }

    let mode = if round_trip { "round_trip" } else { "lr" };
    let mut records: Vec<EvalRecord> = Vec::new();
    let mut methods: Vec<String> = vec![pred_label.to_string()];
    methods.extend(BASELINES.iter().map(|(n, _)| n.to_string()));

    for item in &items {
        let mut outputs: Vec<(String, Tensor<f32>)> =
            vec![(pred_label.to_string(), item.pred.clone())];
        for (name, method) in BASELINES {
            outputs.push((name.to_string(), classic_downscale(&item.hr, scale, method)?));
        }
        for (method, lr) in outputs {
            let (a, b) = if round_trip {
                (bicubic_upscale(&lr, scale)?, item.hr.clone())
            } else {
                (lr, item.gt.clone())
            };
            let (ya, yb) = (rgb_to_y(&a)?, rgb_to_y(&b)?);
            records.push(EvalRecord {
                image: item.name.clone(),
                method,
                mode,
                psnr_rgb: psnr(&a, &b, 1.0)?,
                ssim_rgb: ssim(&a, &b)?,
                psnr_y: psnr(&ya, &yb, 1.0)?,
                ssim_y: ssim(&ya, &yb)?,
            });
        }
    }

    // Per-method means, in first-seen method order.
    let mut sums: BTreeMap<&str, (f64, f64, f64, f64, usize)> = BTreeMap::new();
    for r in &records {
        let e = sums.entry(&r.method).or_default();
        e.0 += r.psnr_rgb;
        e.1 += r.ssim_rgb;
        e.2 += r.psnr_y;
        e.3 += r.ssim_y;
        e.4 += 1;
    }
    let mut mean_records: Vec<EvalRecord> = Vec::new();
    for m in &methods {
        let (p, s, py, sy, n) = sums[m.as_str()];
        let n = n as f64;
        mean_records.push(EvalRecord {
            image: "mean".to_string(),
            method: m.clone(),
            mode,
            psnr_rgb: p / n,
            ssim_rgb: s / n,
            psnr_y: py / n,
            ssim_y: sy / n,
        });
    }

    println!(
        "{:<24} {:<10} {:>9} {:>9} {:>9} {:>9}",
        "image", "method", "psnr_rgb", "ssim_rgb", "psnr_y", "ssim_y"
    );
    for r in records.iter().chain(&mean_records) {
        println!(
            "{:<24} {:<10} {:>9} {:>9.4} {:>9} {:>9.4}",
            r.image,
            r.method,
            fmt_db(r.psnr_rgb),
            r.ssim_rgb,
            fmt_db(r.psnr_y),
            r.ssim_y
        );
    }

    if let Some(path) = out {
        let mut text = String::new();
        for r in records.iter().chain(&mean_records) {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {} records to {}", records.len() + mean_records.len(), path.display());
    }
    Ok(())
}

/// Items for --pred-dir mode: every prediction must have a same-named
/// ground-truth LR and HR original; the scale is inferred from their extents.
fn load_pred_items(
    pred_dir: &Path,
    gt_dir: &Path,
    hr_dir: &Path,
) -> Result<(Vec<EvalItem>, usize, &'static str)> {
    let preds = data::list_pngs(pred_dir)?;
    if preds.is_empty() {
        bail!("{}: no PNG files", pred_dir.display());
    }
    let mut items = Vec::with_capacity(preds.len());
    let mut scale = None;
    for path in preds {
        let name = path
            .file_name()
            .expect("listed files have names")
            .to_string_lossy()
            .into_owned();
        let pred = load_png(&path)?;
        let gt_path = gt_dir.join(&name);
        let hr_path = hr_dir.join(&name);
        if !gt_path.is_file() {
            bail!("{name}: no ground-truth partner {}", gt_path.display());
        }
        if !hr_path.is_file() {
            bail!("{name}: no HR partner {}", hr_path.display());
        }
        let gt = load_png(&gt_path)?;
        let hr = load_png(&hr_path)?;
        if pred.shape() != gt.shape() {
            bail!(
                "{name}: prediction is {:?} but ground truth is {:?}",
                pred.shape(),
                gt.shape()
            );
        }
        let (hh, lh) = (hr.shape()[0], gt.shape()[0]);
        if lh == 0 || hh % lh != 0 || hr.shape()[1] % gt.shape()[1] != 0 {
            bail!("{name}: HR extents are not a multiple of LR extents");
        }
        let s = hh / lh;
        if hr.shape()[1] / gt.shape()[1] != s || s < 2 {
            bail!("{name}: inconsistent downscale factor between axes");
        }
        match scale {
            None => scale = Some(s),
            Some(prev) if prev != s => {
                bail!("{name}: scale {s} differs from earlier images' {prev}")
            }
            _ => {}
        }
        items.push(EvalItem { name, hr, gt, pred });
    }
    Ok((items, scale.expect("at least one image"), "pred"))
}

/// Items for --ckpt + --manifest mode: predictions come from the model.
fn load_model_items(
    ckpt: &Path,
    manifest: &Path,
) -> Result<(Vec<EvalItem>, usize, &'static str)> {
    let params = load_model(ckpt)?;
    let scale = params.config().scale;
    let manifest = data::DatasetManifest::parse(manifest)?;
    if manifest.scale != scale {
        bail!(
            "checkpoint was trained at x{scale} but the manifest declares x{}",
            manifest.scale
        );
    }
    let pairs = data::load_pairs(&manifest)?;
    let mut items = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let (pred, _) = params.forward(&pair.hr)?;
        items.push(EvalItem {
            name: pair.id,
            hr: pair.hr,
            gt: pair.lr,
            pred,
        });
    }
    Ok((items, scale, "model"))
}
