//! Resampling: coordinate projection between grids, application of
//! per-pixel predicted kernel fields, and classic fixed-kernel downscalers
//! used as baselines and as ground-truth generators for synthetic data.
//!
//! Grid correspondence follows the center-alignment convention: output
//! pixel `x` at integer scale `s` projects to source coordinate
//! `u = (x + 0.5) * s - 0.5`, and the anchor is `u` rounded half-up.
//! Out-of-range samples mirror back into the image without repeating the
//! edge (same convention as convolution padding).

use crate::error::{Error, Result};
use crate::ops::reflect_index;
use crate::tensor::{Scalar, Tensor};

/// Continuous source-grid position of an output pixel plus its rounded
/// integer anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedCenter {
    pub row: f64,
    pub col: f64,
    pub anchor_row: isize,
    pub anchor_col: isize,
}

/// Project an output-grid pixel onto the source grid at integer `scale`.
/// Anchors round half-up, so even scales (half-integral centers) resolve
/// deterministically toward the larger index.
pub fn project(out_row: usize, out_col: usize, scale: usize) -> ProjectedCenter {
    let s = scale as f64;
    let row = (out_row as f64 + 0.5) * s - 0.5;
    let col = (out_col as f64 + 0.5) * s - 0.5;
    ProjectedCenter {
        row,
        col,
        anchor_row: (row + 0.5).floor() as isize,
        anchor_col: (col + 0.5).floor() as isize,
    }
}

/// Reflected row/column source indices of a `k x k` window centered on an
/// anchor. Row-major: entry `(i, j)` reads `rows[i]`, `cols[j]`.
#[derive(Debug, Clone)]
pub struct PatchIndices {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

/// Window indices for a `k x k` patch (odd `k`) centered on `center`'s
/// anchor within an `h x w` source image.
pub fn patch_indices(center: &ProjectedCenter, k: usize, h: usize, w: usize) -> PatchIndices {
    let half = (k / 2) as isize;
    PatchIndices {
        rows: (0..k as isize)
            .map(|i| reflect_index(center.anchor_row + i - half, h))
            .collect(),
        cols: (0..k as isize)
            .map(|j| reflect_index(center.anchor_col + j - half, w))
            .collect(),
    }
}

fn check_field_shapes<T: Scalar>(
    hr: &Tensor<T>,
    kernels: &Tensor<T>,
    scale: usize,
    op: &'static str,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let [hh, hw, hc] = *hr.shape() else {
        return Err(Error::InvalidShape {
            op,
            msg: format!("expected rank-3 image, got {:?}", hr.shape()),
        });
    };
    let [lh, lw, kc, k, k2] = *kernels.shape() else {
        return Err(Error::InvalidShape {
            op,
            msg: format!("expected rank-5 kernel field, got {:?}", kernels.shape()),
        });
    };
    if k != k2 || k % 2 == 0 {
        return Err(Error::InvalidShape {
            op,
            msg: format!("kernels must be odd and square, got {k}x{k2}"),
        });
    }
    if scale < 1 || hh != lh * scale || hw != lw * scale || hc != kc {
        return Err(Error::InvalidShape {
            op,
            msg: format!(
                "image {:?} does not match kernel field {:?} at scale {scale}",
                hr.shape(),
                kernels.shape()
            ),
        });
    }
    Ok((hh, hw, hc, lh, lw, k))
}

/// Downscale `hr` (`h*s x w*s x c`) with a per-pixel, per-channel kernel
/// field (`h x w x c x k x k`): each output value is the kernel-weighted sum
/// of the `k x k` source window centered on the projected anchor.
pub fn apply_kernel_field<T: Scalar>(
    hr: &Tensor<T>,
    kernels: &Tensor<T>,
    scale: usize,
) -> Result<Tensor<T>> {
    let (hh, hw, hc, lh, lw, k) = check_field_shapes(hr, kernels, scale, "apply_kernel_field")?;
    let src = hr.data();
    let kd = kernels.data();
    let mut out = Vec::with_capacity(lh * lw * hc);
    for y in 0..lh {
        for x in 0..lw {
            let center = project(y, x, scale);
            let patch = patch_indices(&center, k, hh, hw);
            let kbase = ((y * lw + x) * hc) * k * k;
            for c in 0..hc {
                let kw = &kd[kbase + c * k * k..][..k * k];
                let mut acc = T::zero();
                for (i, &ry) in patch.rows.iter().enumerate() {
                    for (j, &rx) in patch.cols.iter().enumerate() {
                        acc = acc + kw[i * k + j] * src[(ry * hw + rx) * hc + c];
                    }
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(vec![lh, lw, hc], out)
}

/// Gradient of [`apply_kernel_field`] with respect to the kernel field:
/// each kernel tap receives `grad_out * (source sample it weighted)`.
pub fn apply_kernel_field_backward_kernels<T: Scalar>(
    grad_out: &Tensor<T>,
    hr: &Tensor<T>,
    kernel_shape: &[usize],
    scale: usize,
) -> Result<Tensor<T>> {
    let kernels = Tensor::zeros(kernel_shape.to_vec())?;
    let (hh, hw, hc, lh, lw, k) =
        check_field_shapes(hr, &kernels, scale, "apply_kernel_field_backward_kernels")?;
    if grad_out.shape() != [lh, lw, hc] {
        return Err(Error::InvalidShape {
            op: "apply_kernel_field_backward_kernels",
            msg: format!("gradient shape {:?} does not match output", grad_out.shape()),
        });
    }
    let src = hr.data();
    let g = grad_out.data();
    let mut out = kernels;
    let od = out.data_mut();
    for y in 0..lh {
        for x in 0..lw {
            let center = project(y, x, scale);
            let patch = patch_indices(&center, k, hh, hw);
            let kbase = ((y * lw + x) * hc) * k * k;
            for c in 0..hc {
                let gv = g[(y * lw + x) * hc + c];
                let kw = &mut od[kbase + c * k * k..][..k * k];
                for (i, &ry) in patch.rows.iter().enumerate() {
                    for (j, &rx) in patch.cols.iter().enumerate() {
                        kw[i * k + j] = gv * src[(ry * hw + rx) * hc + c];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`apply_kernel_field`] with respect to the source image:
/// scatter each weighted tap back onto the (possibly reflected) source
/// pixel it read. Accumulation order is fixed, so results are deterministic.
pub fn apply_kernel_field_backward_image<T: Scalar>(
    grad_out: &Tensor<T>,
    kernels: &Tensor<T>,
    hr_shape: &[usize],
    scale: usize,
) -> Result<Tensor<T>> {
    let hr = Tensor::zeros(hr_shape.to_vec())?;
    let (hh, hw, hc, lh, lw, k) =
        check_field_shapes(&hr, kernels, scale, "apply_kernel_field_backward_image")?;
    if grad_out.shape() != [lh, lw, hc] {
        return Err(Error::InvalidShape {
            op: "apply_kernel_field_backward_image",
            msg: format!("gradient shape {:?} does not match output", grad_out.shape()),
        });
    }
    let kd = kernels.data();
    let g = grad_out.data();
    let mut out = hr;
    let od = out.data_mut();
    for y in 0..lh {
        for x in 0..lw {
            let center = project(y, x, scale);
            let patch = patch_indices(&center, k, hh, hw);
            let kbase = ((y * lw + x) * hc) * k * k;
            for c in 0..hc {
                let gv = g[(y * lw + x) * hc + c];
                let kw = &kd[kbase + c * k * k..][..k * k];
                for (i, &ry) in patch.rows.iter().enumerate() {
                    for (j, &rx) in patch.cols.iter().enumerate() {
                        let at = (ry * hw + rx) * hc + c;
                        od[at] = od[at] + gv * kw[i * k + j];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Fixed-kernel resampling methods used as baselines and ground-truth
/// generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassicMethod {
    /// Anchor-pixel pick.
    Nearest,
    /// Mean over each `s x s` block.
    Box,
    /// Catmull-Rom-family cubic (a = -0.5).
    Bicubic,
    /// Three-lobe windowed sinc.
    Lanczos3,
}

impl ClassicMethod {
    /// Filter support radius in output-pixel units (before antialias
    /// stretching by the scale factor).
    fn radius(self) -> f64 {
        match self {
            ClassicMethod::Nearest | ClassicMethod::Box => 0.5,
            ClassicMethod::Bicubic => 2.0,
            ClassicMethod::Lanczos3 => 3.0,
        }
    }

    /// Filter profile at offset `x` (output-pixel units).
    fn eval(self, x: f64) -> f64 {
        match self {
            ClassicMethod::Nearest | ClassicMethod::Box => {
                // Half-open support keeps exactly s taps per block.
                if (-0.5..0.5).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            ClassicMethod::Bicubic => keys_cubic(x),
            ClassicMethod::Lanczos3 => lanczos3(x),
        }
    }
}

impl std::str::FromStr for ClassicMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ClassicMethod::Nearest),
            "box" => Ok(ClassicMethod::Box),
            "bicubic" => Ok(ClassicMethod::Bicubic),
            "lanczos3" => Ok(ClassicMethod::Lanczos3),
            other => Err(Error::Config(format!(
                "unknown resampling method '{other}' (expected nearest, box, bicubic, or lanczos3)"
            ))),
        }
    }
}

impl std::fmt::Display for ClassicMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ClassicMethod::Nearest => "nearest",
            ClassicMethod::Box => "box",
            ClassicMethod::Bicubic => "bicubic",
            ClassicMethod::Lanczos3 => "lanczos3",
        };
        f.write_str(name)
    }
}

/// Catmull-Rom-family cubic interpolation profile with a = -0.5.
fn keys_cubic(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

/// Three-lobe Lanczos window: sinc(x) * sinc(x/3) on |x| < 3.
fn lanczos3(x: f64) -> f64 {
    if x.abs() >= 3.0 {
        return 0.0;
    }
    sinc(x) * sinc(x / 3.0)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Tap positions and normalized weights of a 1-D filter at one output index.
struct Taps {
    start: isize,
    weights: Vec<f64>,
}

/// Antialiased taps for downscaling by integer `scale`: the filter profile
/// is stretched by `scale` and weights are normalized to sum to one.
fn downscale_taps(out_idx: usize, scale: usize, method: ClassicMethod) -> Taps {
    let s = scale as f64;
    let u = (out_idx as f64 + 0.5) * s - 0.5;
    let support = method.radius() * s;
    let start = (u - support).floor() as isize;
    let end = (u + support).ceil() as isize;
    let mut weights: Vec<f64> = (start..=end)
        .map(|t| method.eval((t as f64 - u) / s))
        .collect();
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0, "filter support cannot be empty");
    for w in &mut weights {
        *w /= total;
    }
    Taps { start, weights }
}

/// Interpolation taps for upscaling by integer `scale` (no antialiasing).
fn upscale_taps(out_idx: usize, scale: usize, method: ClassicMethod) -> Taps {
    let s = scale as f64;
    let u = (out_idx as f64 + 0.5) / s - 0.5;
    let support = method.radius();
    let start = (u - support).floor() as isize;
    let end = (u + support).ceil() as isize;
    let mut weights: Vec<f64> = (start..=end).map(|t| method.eval(t as f64 - u)).collect();
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0, "filter support cannot be empty");
    for w in &mut weights {
        *w /= total;
    }
    Taps { start, weights }
}

enum Axis {
    Rows,
    Cols,
}

/// Apply precomputed 1-D taps along one spatial axis of an `h x w x c`
/// tensor. `taps[i]` gives the filter for output index `i` along the axis.
fn apply_taps_axis<T: Scalar>(t: &Tensor<T>, taps: &[Taps], axis: Axis) -> Result<Tensor<T>> {
    let [h, w, c] = *t.shape() else {
        return Err(Error::InvalidShape {
            op: "apply_taps_axis",
            msg: format!("expected rank-3 image, got {:?}", t.shape()),
        });
    };
    let src = t.data();
    let (oh, ow) = match axis {
        Axis::Rows => (taps.len(), w),
        Axis::Cols => (h, taps.len()),
    };
    let mut out = vec![T::zero(); oh * ow * c];
    for (oy, row) in out.chunks_exact_mut(ow * c).enumerate() {
        for ox in 0..ow {
            let tap = match axis {
                Axis::Rows => &taps[oy],
                Axis::Cols => &taps[ox],
            };
            let pix = &mut row[ox * c..][..c];
            for (off, &wt) in tap.weights.iter().enumerate() {
                if wt == 0.0 {
                    continue;
                }
                let wv = T::from_f64(wt);
                let at = tap.start + off as isize;
                let sidx = match axis {
                    Axis::Rows => (reflect_index(at, h) * w + ox) * c,
                    Axis::Cols => (oy * w + reflect_index(at, w)) * c,
                };
                let spix = &src[sidx..][..c];
                for (d, &sv) in pix.iter_mut().zip(spix) {
                    *d = *d + wv * sv;
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

/// Downscale an `h*s x w*s x c` image by integer `scale` with a fixed
/// antialiased filter (separable; rows then columns). `Nearest` picks the
/// projected anchor pixel directly.
pub fn classic_downscale<T: Scalar>(
    hr: &Tensor<T>,
    scale: usize,
    method: ClassicMethod,
) -> Result<Tensor<T>> {
    let [h, w, c] = *hr.shape() else {
        return Err(Error::InvalidShape {
            op: "classic_downscale",
            msg: format!("expected rank-3 image, got {:?}", hr.shape()),
        });
    };
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(Error::InvalidShape {
            op: "classic_downscale",
            msg: format!("{h}x{w} image not divisible by scale {scale}"),
        });
    }
    let (lh, lw) = (h / scale, w / scale);
    if method == ClassicMethod::Nearest {
        let src = hr.data();
        let mut out = Vec::with_capacity(lh * lw * c);
        for y in 0..lh {
            for x in 0..lw {
                let center = project(y, x, scale);
                let ry = reflect_index(center.anchor_row, h);
                let rx = reflect_index(center.anchor_col, w);
                out.extend_from_slice(&src[(ry * w + rx) * c..][..c]);
            }
        }
        return Tensor::new(vec![lh, lw, c], out);
    }
    let row_taps: Vec<Taps> = (0..lh).map(|i| downscale_taps(i, scale, method)).collect();
    let col_taps: Vec<Taps> = (0..lw).map(|i| downscale_taps(i, scale, method)).collect();
    let mid = apply_taps_axis(hr, &row_taps, Axis::Rows)?;
    apply_taps_axis(&mid, &col_taps, Axis::Cols)
}

/// Upscale an `h x w x c` image by integer `scale` with cubic interpolation
/// (used for round-trip comparisons against a full-resolution reference).
pub fn bicubic_upscale<T: Scalar>(lr: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let [h, w, _] = *lr.shape() else {
        return Err(Error::InvalidShape {
            op: "bicubic_upscale",
            msg: format!("expected rank-3 image, got {:?}", lr.shape()),
        });
    };
    if scale == 0 {
        return Err(Error::InvalidShape {
            op: "bicubic_upscale",
            msg: "scale must be at least 1".into(),
        });
    }
    let row_taps: Vec<Taps> = (0..h * scale)
        .map(|i| upscale_taps(i, scale, ClassicMethod::Bicubic))
        .collect();
    let col_taps: Vec<Taps> = (0..w * scale)
        .map(|i| upscale_taps(i, scale, ClassicMethod::Bicubic))
        .collect();
    let mid = apply_taps_axis(lr, &row_taps, Axis::Rows)?;
    apply_taps_axis(&mid, &col_taps, Axis::Cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_image(rng: &mut StdRng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn projection_follows_center_alignment() {
        let p = project(0, 0, 2);
        assert_eq!((p.row, p.col), (0.5, 0.5));
        assert_eq!((p.anchor_row, p.anchor_col), (1, 1));
        let p = project(0, 1, 2);
        assert_eq!(p.col, 2.5);
        assert_eq!(p.anchor_col, 3);
        let p = project(1, 0, 3);
        assert_eq!(p.row, 4.0);
        assert_eq!(p.anchor_row, 4);
        let p = project(0, 0, 4);
        assert_eq!(p.col, 1.5);
        assert_eq!(p.anchor_col, 2); // half rounds up
    }

    #[test]
    fn patch_indices_center_on_anchor_and_reflect() {
        let center = project(0, 0, 2); // anchor (1, 1)
        let patch = patch_indices(&center, 5, 8, 8);
        assert_eq!(patch.rows, vec![1, 0, 1, 2, 3]); // -1 reflects to 1
        assert_eq!(patch.cols, vec![1, 0, 1, 2, 3]);
    }

    #[test]
    fn centered_one_hot_kernels_reproduce_nearest() {
        let mut rng = StdRng::seed_from_u64(31);
        for &s in &[2usize, 3, 4] {
            let k = 2 * s + 1;
            let hr = rand_image(&mut rng, &[4 * s, 5 * s, 3]);
            let mut kernels = Tensor::<f64>::zeros(vec![4, 5, 3, k, k]).unwrap();
            for y in 0..4 {
                for x in 0..5 {
                    for c in 0..3 {
                        kernels.set(&[y, x, c, k / 2, k / 2], 1.0);
                    }
                }
            }
            let adaptive = apply_kernel_field(&hr, &kernels, s).unwrap();
            let nearest = classic_downscale(&hr, s, ClassicMethod::Nearest).unwrap();
            assert_eq!(adaptive, nearest, "scale {s}");
        }
    }

    #[test]
    fn uniform_kernels_preserve_constants() {
        for &s in &[2usize, 3] {
            let k = 2 * s + 1;
            let hr = Tensor::<f64>::full(vec![6 * s, 6 * s, 3], 0.42).unwrap();
            let kernels =
                Tensor::<f64>::full(vec![6, 6, 3, k, k], 1.0 / (k * k) as f64).unwrap();
            let out = apply_kernel_field(&hr, &kernels, s).unwrap();
            for &v in out.data() {
                assert!((v - 0.42).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_field_gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(37);
        let s = 2;
        let k = 3;
        let hr = rand_image(&mut rng, &[4, 4, 2]);
        let kernels = rand_image(&mut rng, &[2, 2, 2, k, k]);
        let r = rand_image(&mut rng, &[2, 2, 2]);
        let eval = |hr_t: &Tensor<f64>, k_t: &Tensor<f64>| {
            apply_kernel_field(hr_t, k_t, s)
                .unwrap()
                .zip_map(&r, "proj", |a, b| a * b)
                .unwrap()
                .sum_all()
        };
        // Tape gradients via the graph op.
        let (gk, gh) = {
            let mut g = Graph::new();
            let hp = g.param(hr.clone()).unwrap();
            let kp = g.param(kernels.clone()).unwrap();
            let out = g.apply_kernels(hp, kp, s).unwrap();
            let proj = g.input(r.clone()).unwrap();
            let m = g.mul(out, proj).unwrap();
            let loss = g.sum_all(m).unwrap();
            let mut grads = g.backward(loss).unwrap();
            (grads.take(kp).unwrap(), grads.take(hp).unwrap())
        };
        let h = 1e-6;
        for at in 0..kernels.len() {
            let mut plus = kernels.clone();
            plus.data_mut()[at] += h;
            let mut minus = kernels.clone();
            minus.data_mut()[at] -= h;
            let fd = (eval(&hr, &plus) - eval(&hr, &minus)) / (2.0 * h);
            assert!((gk.data()[at] - fd).abs() < 1e-7, "kernel coord {at}");
        }
        for at in 0..hr.len() {
            let mut plus = hr.clone();
            plus.data_mut()[at] += h;
            let mut minus = hr.clone();
            minus.data_mut()[at] -= h;
            let fd = (eval(&plus, &kernels) - eval(&minus, &kernels)) / (2.0 * h);
            assert!((gh.data()[at] - fd).abs() < 1e-7, "image coord {at}");
        }
    }

    #[test]
    fn box_downscale_equals_block_means_everywhere() {
        let mut rng = StdRng::seed_from_u64(41);
        for &s in &[2usize, 3, 4] {
            let (lh, lw) = (5, 4);
            let hr = rand_image(&mut rng, &[lh * s, lw * s, 3]);
            let got = classic_downscale(&hr, s, ClassicMethod::Box).unwrap();
            for y in 0..lh {
                for x in 0..lw {
                    for c in 0..3 {
                        let mut acc = 0.0;
                        for dy in 0..s {
                            for dx in 0..s {
                                acc += hr.get(&[y * s + dy, x * s + dx, c]);
                            }
                        }
                        let want = acc / (s * s) as f64;
                        let v = got.get(&[y, x, c]);
                        assert!((v - want).abs() < 1e-9, "s={s} at ({y},{x},{c})");
                    }
                }
            }
        }
    }

    #[test]
    fn separable_bicubic_matches_direct_outer_product() {
        let mut rng = StdRng::seed_from_u64(43);
        let s = 3;
        let hr = rand_image(&mut rng, &[12, 9, 2]);
        let got = classic_downscale(&hr, s, ClassicMethod::Bicubic).unwrap();
        let (h, w) = (12usize, 9usize);
        for y in 0..4 {
            let ty = downscale_taps(y, s, ClassicMethod::Bicubic);
            for x in 0..3 {
                let tx = downscale_taps(x, s, ClassicMethod::Bicubic);
                for c in 0..2 {
                    let mut acc = 0.0;
                    for (i, &wy) in ty.weights.iter().enumerate() {
                        for (j, &wx) in tx.weights.iter().enumerate() {
                            let ry = reflect_index(ty.start + i as isize, h);
                            let rx = reflect_index(tx.start + j as isize, w);
                            acc += wy * wx * hr.get(&[ry, rx, c]);
                        }
                    }
                    let v = got.get(&[y, x, c]);
                    assert!((v - acc).abs() < 1e-9, "at ({y},{x},{c})");
                }
            }
        }
    }

    #[test]
    fn classic_filters_preserve_constant_images() {
        let hr = Tensor::<f64>::full(vec![12, 12, 3], 0.63).unwrap();
        for method in [
            ClassicMethod::Nearest,
            ClassicMethod::Box,
            ClassicMethod::Bicubic,
            ClassicMethod::Lanczos3,
        ] {
            let lr = classic_downscale(&hr, 2, method).unwrap();
            for &v in lr.data() {
                assert!((v - 0.63).abs() < 1e-9, "{method}");
            }
        }
        let up = bicubic_upscale(&classic_downscale(&hr, 2, ClassicMethod::Box).unwrap(), 2)
            .unwrap();
        assert_eq!(up.shape(), &[12, 12, 3]);
        for &v in up.data() {
            assert!((v - 0.63).abs() < 1e-9);
        }
    }

    #[test]
    fn downscale_commutes_with_horizontal_flip() {
        use crate::ops::hflip;
        let mut rng = StdRng::seed_from_u64(47);
        let hr = rand_image(&mut rng, &[12, 18, 3]);
        for method in [ClassicMethod::Box, ClassicMethod::Bicubic, ClassicMethod::Lanczos3] {
            let a = classic_downscale(&hflip(&hr).unwrap(), 3, method).unwrap();
            let b = hflip(&classic_downscale(&hr, 3, method).unwrap()).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-9, "{method}");
            }
        }
    }

    #[test]
    fn nearest_picks_anchor_pixel() {
        let mut hr = Tensor::<f64>::zeros(vec![4, 4, 1]).unwrap();
        hr.set(&[1, 1, 0], 1.0); // anchor of output (0,0) at scale 2
        let lr = classic_downscale(&hr, 2, ClassicMethod::Nearest).unwrap();
        assert_eq!(lr.get(&[0, 0, 0]), 1.0);
        assert_eq!(lr.get(&[0, 1, 0]), 0.0);
    }

    #[test]
    fn downscale_rejects_indivisible_extents() {
        let hr = Tensor::<f64>::zeros(vec![7, 8, 3]).unwrap();
        assert!(classic_downscale(&hr, 2, ClassicMethod::Box).is_err());
    }
}
