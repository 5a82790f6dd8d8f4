//! Helpers shared by the training-style commands.

use std::path::Path;

use adk::data::{self, DatasetManifest, PairedSample};
use adk::resample::ClassicMethod;
use anyhow::{bail, Context, Result};

/// Paired samples from either a dataset manifest or a synthetic generator,
/// plus the downscale factor that governs them. Exactly one source must be
/// given; in manifest mode the manifest's scale is authoritative and a
/// conflicting `--scale` is an error.
pub fn load_dataset(
    manifest: Option<&Path>,
    synth: Option<&str>,
    count: usize,
    hr_size: usize,
    scale: Option<usize>,
    seed: u64,
) -> Result<(Vec<PairedSample>, usize)> {
    match (manifest, synth) {
        (Some(_), Some(_)) => bail!("provide either --manifest or --synth, not both"),
        (None, None) => bail!("provide a data source: --manifest FILE or --synth METHOD"),
        (Some(path), None) => {
            let manifest = DatasetManifest::parse(path)
                .with_context(|| format!("parsing manifest {}", path.display()))?;
            if let Some(s) = scale {
                if s != manifest.scale {
                    bail!(
                        "--scale {s} conflicts with manifest scale {}",
                        manifest.scale
                    );
                }
            }
            let pairs = data::load_pairs(&manifest)?;
            Ok((pairs, manifest.scale))
        }
        (None, Some(method)) => {
            let method: ClassicMethod = method.parse()?;
            let scale = scale.unwrap_or(2);
            let pairs = data::synth_pairs_seeded(count, hr_size, scale, method, seed)?;
            Ok((pairs, scale))
        }
    }
}

/// Largest usable crop size no bigger than `requested`: a multiple of
/// `scale`, at most the smallest image extent, and at least `kernel_size`.
/// Reports to stderr when it shrinks the request.
pub fn clamp_patch(
    requested: usize,
    pairs: &[PairedSample],
    scale: usize,
    kernel_size: usize,
) -> Result<usize> {
    let min_extent = pairs
        .iter()
        .map(|p| p.hr.shape()[0].min(p.hr.shape()[1]))
        .min()
        .unwrap_or(requested);
    if requested <= min_extent {
        return Ok(requested);
    }
    let clamped = min_extent - min_extent % scale;
    if clamped < kernel_size {
        bail!(
            "smallest image ({min_extent} px) cannot fit a crop of at least \
             kernel size {kernel_size} at scale {scale}"
        );
    }
    eprintln!(
        "note: patch size clamped from {requested} to {clamped} to fit the smallest image"
    );
    Ok(clamped)
}

/// Median and 95th percentile of raw samples (any order).
pub fn median_p95(samples: &[f64]) -> (f64, f64) {
    assert!(!samples.is_empty());
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let p95 = sorted[((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1];
    (median, p95)
}

/// `inf`-aware fixed-point formatting for report tables.
pub fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.2}")
    }
}
