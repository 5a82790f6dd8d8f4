//! Paired HR/LR dataset handling: manifest-driven ingestion of PNG pairs,
//! aligned patch cropping, flip/rotation augmentation, deterministic
//! train/validation splitting, and seeded synthetic pair generation.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::resample::{classic_downscale, ClassicMethod};
use crate::tensor::Tensor;

/// One aligned training pair. `hr` extents are exactly `scale` times the
/// `lr` extents; both hold RGB values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub hr: Tensor<f32>,
    pub lr: Tensor<f32>,
}

impl PairedSample {
    /// Check the extent ratio that defines a valid pair.
    pub fn validate(&self, scale: usize) -> Result<()> {
        let (hs, ls) = (self.hr.shape(), self.lr.shape());
        if hs.len() != 3 || ls.len() != 3 || hs[2] != 3 || ls[2] != 3 {
            return Err(Error::Data(format!(
                "{}: expected rank-3 RGB tensors, got {hs:?} and {ls:?}",
                self.id
            )));
        }
        if hs[0] != ls[0] * scale || hs[1] != ls[1] * scale {
            return Err(Error::Data(format!(
                "{}: HR {}x{} is not {scale}x the LR {}x{}",
                self.id, hs[0], hs[1], ls[0], ls[1]
            )));
        }
        Ok(())
    }
}

// ---- PNG codec ----

/// Decode an 8-bit RGB PNG to an `H x W x 3` tensor with values `v / 255`.
pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Data(format!("{}: empty image", path.display())));
    }
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| v as f32 / 255.0)
        .collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode an `H x W x 3` tensor (clamped to `[0, 1]`) as an 8-bit RGB PNG.
pub fn save_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let [h, w, c] = *t.shape() else {
        return Err(Error::InvalidShape {
            op: "save_png",
            msg: format!("expected rank-3 image, got {:?}", t.shape()),
        });
    };
    if c != 3 {
        return Err(Error::InvalidShape {
            op: "save_png",
            msg: format!("expected 3 channels, got {c}"),
        });
    }
    let bytes: Vec<u8> = t.data().iter().map(|&v| quantize(v)).collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, bytes)
        .expect("buffer length matches dimensions");
    img.save(path)?;
    Ok(())
}

/// Encode an `H x W` or `H x W x 1` tensor as an 8-bit grayscale PNG.
pub fn save_gray_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let (h, w) = match *t.shape() {
        [h, w] => (h, w),
        [h, w, 1] => (h, w),
        ref s => {
            return Err(Error::InvalidShape {
                op: "save_gray_png",
                msg: format!("expected rank-2 or HxWx1 image, got {s:?}"),
            })
        }
    };
    let bytes: Vec<u8> = t.data().iter().map(|&v| quantize(v)).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .expect("buffer length matches dimensions");
    img.save(path)?;
    Ok(())
}

/// PNG files directly inside `dir`, sorted by file name for deterministic
/// iteration order.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.to_path_buf(), e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.to_path_buf(), e))?;
        let path = entry.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

// ---- manifest ----

/// Plain-text dataset description: `key=value` lines naming the HR and LR
/// directories (paired by shared basename), the scale, and an optional
/// split tag. `#` starts a comment; unknown keys are hard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub hr_dir: PathBuf,
    pub lr_dir: PathBuf,
    pub scale: usize,
    pub split: Option<String>,
}

impl DatasetManifest {
    /// Parse a manifest file; relative directory paths are resolved
    /// against the manifest's own directory.
    pub fn parse(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut hr_dir = None;
        let mut lr_dir = None;
        let mut scale = None;
        let mut split = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Data(format!(
                    "{}:{}: expected key=value, got '{line}'",
                    path.display(),
                    lineno + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "hr_dir" => hr_dir = Some(resolve(base, value)),
                "lr_dir" => lr_dir = Some(resolve(base, value)),
                "scale" => {
                    scale = Some(value.parse::<usize>().map_err(|_| {
                        Error::Data(format!(
                            "{}:{}: scale must be a positive integer, got '{value}'",
                            path.display(),
                            lineno + 1
                        ))
                    })?)
                }
                "split" => split = Some(value.to_string()),
                other => {
                    return Err(Error::Data(format!(
                        "{}:{}: unknown manifest key '{other}' (accepted: hr_dir, lr_dir, scale, split)",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        let missing = |k: &str| Error::Data(format!("{}: missing required key '{k}'", path.display()));
        Ok(DatasetManifest {
            hr_dir: hr_dir.ok_or_else(|| missing("hr_dir"))?,
            lr_dir: lr_dir.ok_or_else(|| missing("lr_dir"))?,
            scale: scale.ok_or_else(|| missing("scale"))?,
            split,
        })
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

/// Load and validate every HR/LR pair named by the manifest. Every HR file
/// must have an LR partner with the same file name and exactly `1/scale`
/// extents; all offending files are reported together in the error.
pub fn load_pairs(manifest: &DatasetManifest) -> Result<Vec<PairedSample>> {
    let hr_files = list_pngs(&manifest.hr_dir)?;
    let mut pairs = Vec::with_capacity(hr_files.len());
    let mut issues: Vec<String> = Vec::new();
    for hr_path in &hr_files {
        let name = hr_path
            .file_name()
            .expect("listed files have names")
            .to_string_lossy()
            .into_owned();
        let lr_path = manifest.lr_dir.join(&name);
        if !lr_path.is_file() {
            issues.push(format!("missing LR partner for {name}"));
            continue;
        }
        let hr = match load_png(hr_path) {
            Ok(t) => t,
            Err(e) => {
                issues.push(format!("{name}: {e}"));
                continue;
            }
        };
        let lr = match load_png(&lr_path) {
            Ok(t) => t,
            Err(e) => {
                issues.push(format!("{name}: {e}"));
                continue;
            }
        };
        let id = hr_path
            .file_stem()
            .expect("listed files have stems")
            .to_string_lossy()
            .into_owned();
        let sample = PairedSample { id, hr, lr };
        if let Err(e) = sample.validate(manifest.scale) {
            issues.push(format!(
                "{} vs {}: {e}",
                hr_path.display(),
                lr_path.display()
            ));
            continue;
        }
        pairs.push(sample);
    }
    if !issues.is_empty() {
        return Err(Error::Data(format!(
            "{} rejected pair(s): {}",
            issues.len(),
            issues.join("; ")
        )));
    }
    Ok(pairs)
}

// ---- cropping ----

fn crop3(t: &Tensor<f32>, y0: usize, x0: usize, ph: usize, pw: usize) -> Tensor<f32> {
    let (w, c) = (t.shape()[1], t.shape()[2]);
    let src = t.data();
    let mut data = Vec::with_capacity(ph * pw * c);
    for y in y0..y0 + ph {
        let start = (y * w + x0) * c;
        data.extend_from_slice(&src[start..start + pw * c]);
    }
    Tensor::new(vec![ph, pw, c], data).expect("crop extents are valid")
}

/// Crop an aligned `patch x patch` HR window at the given HR origin. The
/// origin must be a multiple of `scale`; the LR crop starts at exactly
/// `origin / scale`.
pub fn crop_at(
    sample: &PairedSample,
    scale: usize,
    patch: usize,
    y0: usize,
    x0: usize,
) -> Result<PairedSample> {
    let (h, w) = (sample.hr.shape()[0], sample.hr.shape()[1]);
    if patch == 0 || patch % scale != 0 {
        return Err(Error::Data(format!(
            "patch size {patch} is not a positive multiple of scale {scale}"
        )));
    }
    if patch > h || patch > w {
        return Err(Error::Data(format!(
            "{}: patch {patch} exceeds image extents {h}x{w}",
            sample.id
        )));
    }
    if y0 % scale != 0 || x0 % scale != 0 || y0 + patch > h || x0 + patch > w {
        return Err(Error::Data(format!(
            "{}: crop origin ({y0}, {x0}) is not on the valid {scale}-aligned grid",
            sample.id
        )));
    }
    Ok(PairedSample {
        id: sample.id.clone(),
        hr: crop3(&sample.hr, y0, x0, patch, patch),
        lr: crop3(
            &sample.lr,
            y0 / scale,
            x0 / scale,
            patch / scale,
            patch / scale,
        ),
    })
}

/// Crop a random aligned patch, with the HR origin sampled uniformly over
/// the valid multiples of `scale` (row drawn first, then column).
pub fn crop_pair(
    sample: &PairedSample,
    scale: usize,
    patch: usize,
    rng: &mut impl Rng,
) -> Result<PairedSample> {
    let (h, w) = (sample.hr.shape()[0], sample.hr.shape()[1]);
    if patch > h || patch > w {
        return Err(Error::Data(format!(
            "{}: patch {patch} exceeds image extents {h}x{w}",
            sample.id
        )));
    }
    if patch == 0 || patch % scale != 0 {
        return Err(Error::Data(format!(
            "patch size {patch} is not a positive multiple of scale {scale}"
        )));
    }
    let y0 = scale * rng.random_range(0..(h - patch) / scale + 1);
    let x0 = scale * rng.random_range(0..(w - patch) / scale + 1);
    crop_at(sample, scale, patch, y0, x0)
}

// ---- augmentation ----

/// A dihedral augmentation: an optional horizontal flip followed by a
/// counterclockwise rotation of `quarter_turns x 90` degrees, applied
/// identically to both members of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentOp {
    pub hflip: bool,
    pub quarter_turns: usize,
}

impl AugmentOp {
    pub const IDENTITY: AugmentOp = AugmentOp {
        hflip: false,
        quarter_turns: 0,
    };

    /// Draw a uniformly random op (flip drawn first, then rotation).
    pub fn sample(rng: &mut impl Rng) -> Self {
        AugmentOp {
            hflip: rng.random_range(0..2u8) == 1,
            quarter_turns: rng.random_range(0..4u8) as usize,
        }
    }

    /// All eight distinct ops, for exhaustive property checks.
    pub fn all() -> Vec<AugmentOp> {
        let mut ops = Vec::with_capacity(8);
        for &hflip in &[false, true] {
            for quarter_turns in 0..4 {
                ops.push(AugmentOp {
                    hflip,
                    quarter_turns,
                });
            }
        }
        ops
    }

    pub fn apply(&self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        let flipped = if self.hflip {
            ops::hflip(t)?
        } else {
            t.clone()
        };
        ops::rot90(&flipped, self.quarter_turns)
    }

    /// The op that undoes this one (rotate back, then unflip).
    pub fn inverse_apply(&self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        let unrotated = ops::rot90(t, (4 - self.quarter_turns) % 4)?;
        if self.hflip {
            ops::hflip(&unrotated)
        } else {
            Ok(unrotated)
        }
    }
}

/// Apply the same geometric op to both members of a pair.
pub fn augment(sample: &PairedSample, op: AugmentOp) -> Result<PairedSample> {
    Ok(PairedSample {
        id: sample.id.clone(),
        hr: op.apply(&sample.hr)?,
        lr: op.apply(&sample.lr)?,
    })
}

// ---- synthetic pairs ----

/// Generate `count` procedural HR textures (mixtures of linear gradients,
/// checkerboards, and band-limited noise, all in `[0, 1]`) and pair each
/// with its classical downscale — a known, learnable target mapping.
pub fn synth_pairs(
    count: usize,
    hr_size: usize,
    scale: usize,
    generator: ClassicMethod,
    rng: &mut impl Rng,
) -> Result<Vec<PairedSample>> {
    if hr_size == 0 || hr_size % scale != 0 {
        return Err(Error::Data(format!(
            "hr_size {hr_size} is not a positive multiple of scale {scale}"
        )));
    }
    (0..count)
        .map(|i| {
            let hr = synth_texture(hr_size, rng);
            let lr = classic_downscale(&hr, scale, generator)?;
            Ok(PairedSample {
                id: format!("synth_{i:04}"),
                hr,
                lr,
            })
        })
        .collect()
}

/// [`synth_pairs`] driven by a self-contained ChaCha8 stream, so callers
/// that only hold a seed get the same pairs as an explicit
/// `ChaCha8Rng::seed_from_u64(seed)`.
pub fn synth_pairs_seeded(
    count: usize,
    hr_size: usize,
    scale: usize,
    generator: ClassicMethod,
    seed: u64,
) -> Result<Vec<PairedSample>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    synth_pairs(count, hr_size, scale, generator, &mut rng)
}

fn synth_texture(n: usize, rng: &mut impl Rng) -> Tensor<f32> {
    // Per-image draw order is fixed: gradient params, checkerboard params,
    // noise grid, mixture weights.
    let gx: f32 = rng.random_range(-1.0..1.0);
    let gy: f32 = rng.random_range(-1.0..1.0);
    let grad_lo: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    let grad_hi: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));

    let cell: usize = rng.random_range(4..=16);
    let oy: usize = rng.random_range(0..cell);
    let ox: usize = rng.random_range(0..cell);
    let check_a: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    let check_b: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));

    let g = n / 8 + 2;
    let grid: Vec<f32> = (0..g * g * 3)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();

    let mut w: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    let wsum: f32 = w.iter().sum();
    if wsum > 1e-6 {
        for v in &mut w {
            *v /= wsum;
        }
    } else {
        w = [1.0 / 3.0; 3];
    }

    let span = (n - 1).max(1) as f32;
    let mag = (gx.abs() + gy.abs()).max(1e-6);
    let mut data = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let t = (gx * (x as f32 / span) + gy * (y as f32 / span) + mag) / (2.0 * mag);
            let checker = ((y + oy) / cell + (x + ox) / cell) % 2 == 0;
            // Coarse-grid bilinear interpolation gives the band-limited part.
            let fy = y as f32 * (g - 1) as f32 / span;
            let fx = x as f32 * (g - 1) as f32 / span;
            let (y0, x0) = (fy as usize, fx as usize);
            let (y1, x1) = ((y0 + 1).min(g - 1), (x0 + 1).min(g - 1));
            let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
            for ch in 0..3 {
                let gradient = grad_lo[ch] + (grad_hi[ch] - grad_lo[ch]) * t;
                let check = if checker { check_a[ch] } else { check_b[ch] };
                let at = |yy: usize, xx: usize| grid[(yy * g + xx) * 3 + ch];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bot = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                let noise = top * (1.0 - ty) + bot * ty;
                data.push(w[0] * gradient + w[1] * check + w[2] * noise);
            }
        }
    }
    Tensor::new(vec![n, n, 3], data).expect("texture extents are valid")
}

// ---- splitting ----

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic ~10% validation split by hash of each sample id. When the
/// hash assigns everything to one side and at least two samples exist, one
/// sample is moved so both splits are nonempty.
pub fn split_train_val(pairs: Vec<PairedSample>) -> (Vec<PairedSample>, Vec<PairedSample>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for p in pairs {
        if fnv1a64(&p.id) % 10 == 0 {
            val.push(p);
        } else {
            train.push(p);
        }
    }
    if val.is_empty() && train.len() >= 2 {
        val.push(train.pop().expect("nonempty"));
    }
    if train.is_empty() && val.len() >= 2 {
        train.push(val.pop().expect("nonempty"));
    }
    (train, val)
}
