//! Image fidelity metrics over `[0, 1]`-ranged tensors: peak
//! signal-to-noise ratio and structural similarity, plus the luma transform
//! used when a single-channel view is needed. All accumulation runs in
//! `f64` regardless of the input precision.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Side length of the SSIM sliding window.
const SSIM_WINDOW: usize = 11;
/// Standard deviation of the SSIM Gaussian window.
const SSIM_SIGMA: f64 = 1.5;
/// Stabilizers (K1*L)^2 and (K2*L)^2 with K1 = 0.01, K2 = 0.03, L = 1.
const SSIM_C1: f64 = 1e-4;
const SSIM_C2: f64 = 9e-4;

/// Fidelity summary for one image pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    /// Peak signal-to-noise ratio in dB; infinite for identical images.
    pub psnr: f64,
    /// Mean structural similarity over valid windows, averaged across
    /// channels.
    pub ssim: f64,
}

fn check_same_images<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    match *a.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::InvalidShape {
            op,
            msg: format!("expected rank-3 images, got {:?}", a.shape()),
        }),
    }
}

/// Peak signal-to-noise ratio in dB for a given `peak` signal value.
/// Identical inputs (zero mean squared error) report `f64::INFINITY`.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "psnr",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x.to_f64() - y.to_f64();
        acc += d * d;
    }
    let mse = acc / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalized 1-D Gaussian window of length [`SSIM_WINDOW`].
fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut total = 0.0;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        total += *v;
    }
    for v in &mut g {
        *v /= total;
    }
    g
}

/// Separable valid-mode weighted blur: returns a
/// `(h - win + 1) x (w - win + 1)` plane.
fn blur_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    // Horizontal pass: h x ow.
    let mut mid = vec![0.0f64; h * ow];
    for y in 0..h {
        let row = &plane[y * w..][..w];
        let out = &mut mid[y * ow..][..ow];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &gv) in g.iter().enumerate() {
                acc += gv * row[x + i];
            }
            *o = acc;
        }
    }
    // Vertical pass: oh x ow.
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        let dst = &mut out[y * ow..][..ow];
        for (i, &gv) in g.iter().enumerate() {
            let src = &mid[(y + i) * ow..][..ow];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += gv * s;
            }
        }
    }
    out
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma = 1.5)
/// over valid window positions only, averaged across channels. Inputs are
/// assumed to live in `[0, 1]` (dynamic range 1).
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (h, w, c) = check_same_images(a, b, "ssim")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidShape {
            op: "ssim",
            msg: format!("images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"),
        });
    }
    let g = gaussian_window();
    let plane_len = h * w;
    let mut total = 0.0f64;
    for ch in 0..c {
        let mut ax = vec![0.0f64; plane_len];
        let mut bx = vec![0.0f64; plane_len];
        for i in 0..plane_len {
            ax[i] = a.data()[i * c + ch].to_f64();
            bx[i] = b.data()[i * c + ch].to_f64();
        }
        let a2: Vec<f64> = ax.iter().map(|v| v * v).collect();
        let b2: Vec<f64> = bx.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = ax.iter().zip(&bx).map(|(x, y)| x * y).collect();
        let mu_a = blur_valid(&ax, h, w, &g);
        let mu_b = blur_valid(&bx, h, w, &g);
        let e_a2 = blur_valid(&a2, h, w, &g);
        let e_b2 = blur_valid(&b2, h, w, &g);
        let e_ab = blur_valid(&ab, h, w, &g);
        let mut acc = 0.0f64;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_a2[i] - ma * ma;
            let vb = e_b2[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            acc += num / den;
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

/// Both metrics for one pair (peak fixed at 1.0).
pub fn report<T: Scalar>(pred: &Tensor<T>, reference: &Tensor<T>) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr: psnr(pred, reference, 1.0)?,
        ssim: ssim(pred, reference)?,
    })
}

/// BT.601 luma plane (`h x w x 1`) of an RGB image:
/// `y = 0.299 r + 0.587 g + 0.114 b`.
pub fn rgb_to_y<T: Scalar>(rgb: &Tensor<T>) -> Result<Tensor<T>> {
    let [h, w, c] = *rgb.shape() else {
        return Err(Error::InvalidShape {
            op: "rgb_to_y",
            msg: format!("expected rank-3 image, got {:?}", rgb.shape()),
        });
    };
    if c != 3 {
        return Err(Error::InvalidShape {
            op: "rgb_to_y",
            msg: format!("expected 3 channels, got {c}"),
        });
    }
    let (cr, cg, cb) = (
        T::from_f64(0.299),
        T::from_f64(0.587),
        T::from_f64(0.114),
    );
    let src = rgb.data();
    let data = src
        .chunks_exact(3)
        .map(|p| cr * p[0] + cg * p[1] + cb * p[2])
        .collect();
    Tensor::new(vec![h, w, 1], data)
}
