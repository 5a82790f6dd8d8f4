//! Raw value-level kernels: padding, valid convolution (forward and the
//! three backward passes), space/depth rearrangement, and the dihedral
//! transforms used for augmentation.
//!
//! Every kernel is deterministic: parallelism only ever splits disjoint
//! output regions, and each output element is accumulated sequentially in a
//! fixed order, so results are bit-identical across runs and thread counts.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Minimum per-call flop estimate before a kernel fans out across threads.
const PAR_WORK_THRESHOLD: usize = 1 << 16;

/// Mirror an out-of-range index into `[0, n)` without repeating the edge
/// sample (for width 5: -1 -> 1, -2 -> 2, 5 -> 3, 6 -> 2). Total for any
/// offset, folding as many times as needed.
pub fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n >= 1);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

fn dims3(t: &Tensor<impl Scalar>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::InvalidShape {
            op,
            msg: format!("expected rank-3 height x width x channels, got {:?}", t.shape()),
        }),
    }
}

fn dims4(t: &Tensor<impl Scalar>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(Error::InvalidShape {
            op,
            msg: format!("expected rank-4 out x in x kh x kw, got {:?}", t.shape()),
        }),
    }
}

/// Run `f` once per `row_len`-sized chunk of `out`, in parallel when the
/// total work is worth the dispatch. Rows are disjoint, so the result is
/// identical either way.
fn for_each_row<T: Send>(
    out: &mut [T],
    row_len: usize,
    total_work: usize,
    f: impl Fn(usize, &mut [T]) + Sync,
) {
    if total_work >= PAR_WORK_THRESHOLD && rayon::current_num_threads() > 1 {
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(y, row)| f(y, row));
    } else {
        for (y, row) in out.chunks_mut(row_len).enumerate() {
            f(y, row);
        }
    }
}

/// Pad a height x width x channels tensor by `pad` on all four sides using
/// edge-exclusive mirror reflection.
pub fn reflect_pad<T: Scalar>(t: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let (h, w, c) = dims3(t, "reflect_pad")?;
    if pad > 0 && pad >= h.min(w) {
        return Err(Error::InvalidShape {
            op: "reflect_pad",
            msg: format!("pad {pad} too large for {h}x{w} input"),
        });
    }
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let src = t.data();
    let mut out = vec![T::zero(); oh * ow * c];
    for (y, row) in out.chunks_exact_mut(ow * c).enumerate() {
        let sy = reflect_index(y as isize - pad as isize, h);
        for (x, pix) in row.chunks_exact_mut(c).enumerate() {
            let sx = reflect_index(x as isize - pad as isize, w);
            pix.copy_from_slice(&src[(sy * w + sx) * c..][..c]);
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

/// Adjoint of [`reflect_pad`]: fold an upstream gradient over the padded
/// tensor back onto the source positions each padded element was read from.
pub fn reflect_pad_backward<T: Scalar>(
    grad: &Tensor<T>,
    src_h: usize,
    src_w: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (gh, gw, c) = dims3(grad, "reflect_pad_backward")?;
    if gh != src_h + 2 * pad || gw != src_w + 2 * pad {
        return Err(Error::InvalidShape {
            op: "reflect_pad_backward",
            msg: format!("gradient {gh}x{gw} does not match source {src_h}x{src_w} with pad {pad}"),
        });
    }
    let g = grad.data();
    let mut out = vec![T::zero(); src_h * src_w * c];
    for y in 0..gh {
        let sy = reflect_index(y as isize - pad as isize, src_h);
        for x in 0..gw {
            let sx = reflect_index(x as isize - pad as isize, src_w);
            let dst = &mut out[(sy * src_w + sx) * c..][..c];
            let src = &g[(y * gw + x) * c..][..c];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }
    Tensor::new(vec![src_h, src_w, c], out)
}

/// Reorder `[co][ci][kh][kw]` weights so the innermost contiguous run is
/// indexed by `inner_out` (true: `[kh][kw][ci][co]`, false: `[kh][kw][co][ci]`).
fn transpose_weight<T: Scalar>(
    w: &Tensor<T>,
    dims: (usize, usize, usize, usize),
    inner_out: bool,
) -> Vec<T> {
    let (co_n, ci_n, kh, kw) = dims;
    let src = w.data();
    let mut dst = vec![T::zero(); src.len()];
    for co in 0..co_n {
        for ci in 0..ci_n {
            for dy in 0..kh {
                for dx in 0..kw {
                    let v = src[((co * ci_n + ci) * kh + dy) * kw + dx];
                    let at = if inner_out {
                        ((dy * kw + dx) * ci_n + ci) * co_n + co
                    } else {
                        ((dy * kw + dx) * co_n + co) * ci_n + ci
                    };
                    dst[at] = v;
                }
            }
        }
    }
    dst
}

/// Valid cross-correlation of a `h x w x ci` input with `co x ci x kh x kw`
/// weights plus a `co` bias. Output is `(h-kh+1) x (w-kw+1) x co`.
pub fn conv_valid<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w, ci_n) = dims3(input, "conv_valid")?;
    let wd = dims4(weight, "conv_valid")?;
    let (co_n, wci, kh, kw) = wd;
    if wci != ci_n {
        return Err(Error::ShapeMismatch {
            op: "conv_valid",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    if bias.shape() != [co_n] {
        return Err(Error::ShapeMismatch {
            op: "conv_valid",
            lhs: weight.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    if h < kh || w < kw {
        return Err(Error::InvalidShape {
            op: "conv_valid",
            msg: format!("input {h}x{w} smaller than kernel {kh}x{kw}"),
        });
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let wt = transpose_weight(weight, wd, true);
    let x = input.data();
    let b = bias.data();
    let mut out = vec![T::zero(); oh * ow * co_n];
    let work = oh * ow * co_n * ci_n * kh * kw;
    for_each_row(&mut out, ow * co_n, work, |y, row| {
        let mut acc = vec![T::zero(); co_n];
        for xo in 0..ow {
            acc.copy_from_slice(b);
            for dy in 0..kh {
                let window = &x[((y + dy) * w + xo) * ci_n..][..kw * ci_n];
                let wrow = &wt[dy * kw * ci_n * co_n..][..kw * ci_n * co_n];
                for (pix, wpix) in window
                    .chunks_exact(ci_n)
                    .zip(wrow.chunks_exact(ci_n * co_n))
                {
                    for (ci, &a) in pix.iter().enumerate() {
                        let ws = &wpix[ci * co_n..][..co_n];
                        for (o, &wv) in acc.iter_mut().zip(ws) {
                            *o = *o + a * wv;
                        }
                    }
                }
            }
            row[xo * co_n..][..co_n].copy_from_slice(&acc);
        }
    });
    Tensor::new(vec![oh, ow, co_n], out)
}

/// Gradient of [`conv_valid`] with respect to its input.
pub fn conv_valid_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (oh, ow, co_n) = dims3(grad_out, "conv_valid_backward_input")?;
    let wd = dims4(weight, "conv_valid_backward_input")?;
    let (wco, ci_n, kh, kw) = wd;
    if wco != co_n {
        return Err(Error::ShapeMismatch {
            op: "conv_valid_backward_input",
            lhs: grad_out.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    let (h, w) = (oh + kh - 1, ow + kw - 1);
    let wt = transpose_weight(weight, wd, false);
    let g = grad_out.data();
    let mut out = vec![T::zero(); h * w * ci_n];
    let work = oh * ow * co_n * ci_n * kh * kw;
    for_each_row(&mut out, w * ci_n, work, |p, row| {
        for dy in 0..kh {
            let Some(y) = p.checked_sub(dy) else { continue };
            if y >= oh {
                continue;
            }
            for x in 0..ow {
                let gpix = &g[(y * ow + x) * co_n..][..co_n];
                for dx in 0..kw {
                    // q = x + dx is always within [0, w): the row covers the
                    // full padded extent, so no bounds branch is needed.
                    let dst = &mut row[(x + dx) * ci_n..][..ci_n];
                    let wbase = ((dy * kw + dx) * co_n) * ci_n;
                    for (co, &gv) in gpix.iter().enumerate() {
                        let ws = &wt[wbase + co * ci_n..][..ci_n];
                        for (d, &wv) in dst.iter_mut().zip(ws) {
                            *d = *d + gv * wv;
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![h, w, ci_n], out)
}

/// Gradient of [`conv_valid`] with respect to its weights.
pub fn conv_valid_backward_weight<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight_shape: &[usize],
) -> Result<Tensor<T>> {
    let (oh, ow, co_n) = dims3(grad_out, "conv_valid_backward_weight")?;
    let (h, w, ci_n) = dims3(input, "conv_valid_backward_weight")?;
    let [wco, wci, kh, kw] = *weight_shape else {
        return Err(Error::InvalidShape {
            op: "conv_valid_backward_weight",
            msg: format!("expected rank-4 weight shape, got {weight_shape:?}"),
        });
    };
    if wco != co_n || wci != ci_n || h != oh + kh - 1 || w != ow + kw - 1 {
        return Err(Error::InvalidShape {
            op: "conv_valid_backward_weight",
            msg: format!(
                "inconsistent shapes: grad {:?}, input {:?}, weight {weight_shape:?}",
                grad_out.shape(),
                input.shape()
            ),
        });
    }
    let g = grad_out.data();
    let x = input.data();
    // Accumulate in [kh][kw][ci][co] order so the inner loop is a contiguous
    // axpy over output channels, then scatter into the weight layout.
    let mut acc = vec![T::zero(); kh * kw * ci_n * co_n];
    for y in 0..oh {
        for xo in 0..ow {
            let gpix = &g[(y * ow + xo) * co_n..][..co_n];
            for dy in 0..kh {
                let window = &x[((y + dy) * w + xo) * ci_n..][..kw * ci_n];
                for (dx, pix) in window.chunks_exact(ci_n).enumerate() {
                    let abase = ((dy * kw + dx) * ci_n) * co_n;
                    for (ci, &a) in pix.iter().enumerate() {
                        let dst = &mut acc[abase + ci * co_n..][..co_n];
                        for (d, &gv) in dst.iter_mut().zip(gpix) {
                            *d = *d + a * gv;
                        }
                    }
                }
            }
        }
    }
    let mut out = vec![T::zero(); co_n * ci_n * kh * kw];
    for dy in 0..kh {
        for dx in 0..kw {
            for ci in 0..ci_n {
                for co in 0..co_n {
                    out[((co * ci_n + ci) * kh + dy) * kw + dx] =
                        acc[((dy * kw + dx) * ci_n + ci) * co_n + co];
                }
            }
        }
    }
    Tensor::new(weight_shape.to_vec(), out)
}

/// Gradient of [`conv_valid`] with respect to its bias.
pub fn conv_valid_backward_bias<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, co_n) = dims3(grad_out, "conv_valid_backward_bias")?;
    let mut acc = vec![T::zero(); co_n];
    for pix in grad_out.data().chunks_exact(co_n) {
        for (a, &gv) in acc.iter_mut().zip(pix) {
            *a = *a + gv;
        }
    }
    Tensor::new(vec![co_n], acc)
}

/// Space-to-depth: fold each `s x s` spatial block into the channel axis.
/// `out[y, x, c*s*s + dy*s + dx] = in[y*s + dy, x*s + dx, c]`.
pub fn pixel_unshuffle<T: Scalar>(t: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (h, w, c) = dims3(t, "pixel_unshuffle")?;
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::InvalidShape {
            op: "pixel_unshuffle",
            msg: format!("{h}x{w} input not divisible by block size {s}"),
        });
    }
    let (oh, ow) = (h / s, w / s);
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                for dy in 0..s {
                    for dx in 0..s {
                        out.push(src[(((y * s + dy) * w) + (x * s + dx)) * c + ch]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, c * s * s], out)
}

/// Depth-to-space inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<T: Scalar>(t: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (h, w, c) = dims3(t, "pixel_shuffle")?;
    if s == 0 || c % (s * s) != 0 {
        return Err(Error::InvalidShape {
            op: "pixel_shuffle",
            msg: format!("channel extent {c} not divisible by {s}x{s}"),
        });
    }
    let oc = c / (s * s);
    let (oh, ow) = (h * s, w * s);
    let src = t.data();
    let mut out = vec![T::zero(); src.len()];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * c;
            for ch in 0..oc {
                for dy in 0..s {
                    for dx in 0..s {
                        out[(((y * s + dy) * ow) + (x * s + dx)) * oc + ch] =
                            src[base + ch * s * s + dy * s + dx];
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, oc], out)
}

/// Mirror a height x width x channels tensor left-to-right.
pub fn hflip<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = dims3(t, "hflip")?;
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            out.extend_from_slice(&src[(y * w + x) * c..][..c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// Rotate a height x width x channels tensor counterclockwise by
/// `quarter_turns` * 90 degrees.
pub fn rot90<T: Scalar>(t: &Tensor<T>, quarter_turns: usize) -> Result<Tensor<T>> {
    let mut cur = t.clone();
    for _ in 0..quarter_turns % 4 {
        let (h, w, c) = dims3(&cur, "rot90")?;
        let src = cur.data();
        let mut out = Vec::with_capacity(src.len());
        // out(y, x) = in(x, w-1-y): the right edge becomes the top row.
        for y in 0..w {
            for x in 0..h {
                out.extend_from_slice(&src[(x * w + (w - 1 - y)) * c..][..c]);
            }
        }
        cur = Tensor::new(vec![w, h, c], out)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(rng: &mut StdRng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
            assert!(
                (x - y).abs() <= tol,
                "element {i}: {x} vs {y} (tol {tol})"
            );
        }
    }

    /// Reference cross-correlation written as the direct five-deep loop nest.
    fn naive_conv(input: &Tensor<f64>, weight: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
        let [h, w, ci_n] = *input.shape() else { panic!() };
        let [co_n, _, kh, kw] = *weight.shape() else { panic!() };
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        Tensor::from_fn(vec![oh, ow, co_n], |idx| {
            let (y, x, co) = (idx[0], idx[1], idx[2]);
            let mut acc = bias.get(&[co]);
            for ci in 0..ci_n {
                for dy in 0..kh {
                    for dx in 0..kw {
                        acc += input.get(&[y + dy, x + dx, ci]) * weight.get(&[co, ci, dy, dx]);
                    }
                }
            }
            acc
        })
        .unwrap()
    }

    #[test]
    fn reflect_index_mirrors_without_repeating_edges() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(0, 5), 0);
        assert_eq!(reflect_index(4, 5), 4);
        assert_eq!(reflect_index(-7, 1), 0);
        // Deep folds stay in range.
        for i in -50..50 {
            assert!(reflect_index(i, 4) < 4);
        }
    }

    #[test]
    fn reflect_pad_middle_row_follows_mirror_law() {
        // Middle row [a, b, c] of a 3x3 image pads to [b, a, b, c, b].
        let t = Tensor::from_fn(vec![3, 3, 1], |idx| (idx[0] * 3 + idx[1]) as f32).unwrap();
        let p = reflect_pad(&t, 1).unwrap();
        assert_eq!(p.shape(), &[5, 5, 1]);
        let mid: Vec<f32> = (0..5).map(|x| p.get(&[2, x, 0])).collect();
        assert_eq!(mid, vec![4.0, 3.0, 4.0, 5.0, 4.0]);
        // Corner reflects both axes: (-1,-1) -> (1,1).
        assert_eq!(p.get(&[0, 0, 0]), t.get(&[1, 1, 0]));
    }

    #[test]
    fn reflect_pad_zero_is_identity() {
        let t = Tensor::from_fn(vec![4, 5, 2], |idx| (idx[0] + 2 * idx[1] + idx[2]) as f32).unwrap();
        assert_eq!(reflect_pad(&t, 0).unwrap(), t);
    }

    #[test]
    fn reflect_pad_rejects_oversized_pad() {
        let t = Tensor::<f32>::zeros(vec![3, 3, 1]).unwrap();
        assert!(reflect_pad(&t, 3).is_err());
        assert!(reflect_pad(&t, 2).is_ok());
    }

    #[test]
    fn reflect_pad_backward_counts_copies() {
        // With an all-ones upstream gradient, each source pixel receives one
        // unit per padded position that mirrored to it.
        let src_h = 3;
        let src_w = 3;
        let pad = 1;
        let g = Tensor::<f64>::full(vec![5, 5, 1], 1.0).unwrap();
        let got = reflect_pad_backward(&g, src_h, src_w, pad).unwrap();
        let mut want = Tensor::<f64>::zeros(vec![3, 3, 1]).unwrap();
        for y in -1..4isize {
            for x in -1..4isize {
                let sy = reflect_index(y, src_h);
                let sx = reflect_index(x, src_w);
                let v = want.get(&[sy, sx, 0]);
                want.set(&[sy, sx, 0], v + 1.0);
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn conv_valid_matches_hand_case() {
        // 3x3 ramp, 2x2 ones kernel: each output is the window sum.
        let input = Tensor::from_fn(vec![3, 3, 1], |idx| (idx[0] * 3 + idx[1] + 1) as f64).unwrap();
        let weight = Tensor::<f64>::full(vec![1, 1, 2, 2], 1.0).unwrap();
        let bias = Tensor::<f64>::zeros(vec![1]).unwrap();
        let out = conv_valid(&input, &weight, &bias).unwrap();
        assert_eq!(out.shape(), &[2, 2, 1]);
        assert_eq!(out.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv_valid_identity_kernel_passes_input_through() {
        let mut rng = StdRng::seed_from_u64(7);
        let input = rand_tensor(&mut rng, &[4, 5, 1]);
        let weight = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::<f64>::zeros(vec![1]).unwrap();
        assert_eq!(conv_valid(&input, &weight, &bias).unwrap(), input);
    }

    #[test]
    fn conv_valid_matches_naive_reference() {
        let mut rng = StdRng::seed_from_u64(11);
        for &(h, w, ci, co, kh, kw) in &[(5, 6, 3, 4, 3, 3), (4, 4, 1, 2, 2, 2), (7, 5, 2, 3, 3, 1)]
        {
            let input = rand_tensor(&mut rng, &[h, w, ci]);
            let weight = rand_tensor(&mut rng, &[co, ci, kh, kw]);
            let bias = rand_tensor(&mut rng, &[co]);
            let got = conv_valid(&input, &weight, &bias).unwrap();
            let want = naive_conv(&input, &weight, &bias);
            assert_close(&got, &want, 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_central_differences() {
        let mut rng = StdRng::seed_from_u64(13);
        let input = rand_tensor(&mut rng, &[4, 4, 2]);
        let weight = rand_tensor(&mut rng, &[3, 2, 2, 2]);
        let bias = rand_tensor(&mut rng, &[3]);
        // Scalarize the output with a fixed random projection R:
        // loss = sum(conv(x, w, b) * R).
        let r = rand_tensor(&mut rng, &[3, 3, 3]);
        let loss = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>| {
            conv_valid(x, wt, b)
                .unwrap()
                .zip_map(&r, "proj", |a, b| a * b)
                .unwrap()
                .sum_all()
        };
        let gi = conv_valid_backward_input(&r, &weight).unwrap();
        let gw = conv_valid_backward_weight(&r, &input, weight.shape()).unwrap();
        let gb = conv_valid_backward_bias(&r).unwrap();
        let h = 1e-6;
        let fd = |base: &Tensor<f64>, at: usize, apply: &dyn Fn(&Tensor<f64>) -> f64| {
            let mut plus = base.clone();
            plus.data_mut()[at] += h;
            let mut minus = base.clone();
            minus.data_mut()[at] -= h;
            (apply(&plus) - apply(&minus)) / (2.0 * h)
        };
        for at in 0..input.len() {
            let want = fd(&input, at, &|x| loss(x, &weight, &bias));
            assert!((gi.data()[at] - want).abs() < 1e-7, "input grad {at}");
        }
        for at in 0..weight.len() {
            let want = fd(&weight, at, &|wt| loss(&input, wt, &bias));
            assert!((gw.data()[at] - want).abs() < 1e-7, "weight grad {at}");
        }
        for at in 0..bias.len() {
            let want = fd(&bias, at, &|b| loss(&input, &weight, b));
            assert!((gb.data()[at] - want).abs() < 1e-7, "bias grad {at}");
        }
    }

    #[test]
    fn pixel_unshuffle_maps_blocks_to_channels() {
        // 4x4 single-channel ramp, s=2: channel order within a block is
        // row-major (dy, dx).
        let t = Tensor::from_fn(vec![4, 4, 1], |idx| (idx[0] * 4 + idx[1]) as f32).unwrap();
        let u = pixel_unshuffle(&t, 2).unwrap();
        assert_eq!(u.shape(), &[2, 2, 4]);
        assert_eq!(
            (0..4).map(|c| u.get(&[0, 0, c])).collect::<Vec<_>>(),
            vec![0.0, 1.0, 4.0, 5.0]
        );
        assert_eq!(
            (0..4).map(|c| u.get(&[1, 0, c])).collect::<Vec<_>>(),
            vec![8.0, 9.0, 12.0, 13.0]
        );
    }

    #[test]
    fn pixel_shuffle_inverts_unshuffle_bit_exactly() {
        let mut rng = StdRng::seed_from_u64(17);
        for &(h, w, c, s) in &[(6, 8, 3, 2), (9, 6, 2, 3), (8, 8, 1, 4)] {
            let t = rand_tensor(&mut rng, &[h, w, c]);
            let round = pixel_shuffle(&pixel_unshuffle(&t, s).unwrap(), s).unwrap();
            assert_eq!(t, round);
        }
    }

    #[test]
    fn pixel_unshuffle_rejects_indivisible_extents() {
        let t = Tensor::<f32>::zeros(vec![5, 4, 1]).unwrap();
        assert!(pixel_unshuffle(&t, 2).is_err());
    }

    #[test]
    fn hflip_is_involutive_and_mirrors_columns() {
        let t = Tensor::from_fn(vec![2, 3, 1], |idx| (idx[1]) as f32).unwrap();
        let f = hflip(&t).unwrap();
        assert_eq!(f.get(&[0, 0, 0]), 2.0);
        assert_eq!(f.get(&[0, 2, 0]), 0.0);
        assert_eq!(hflip(&f).unwrap(), t);
    }

    #[test]
    fn rot90_four_turns_is_identity() {
        let mut rng = StdRng::seed_from_u64(19);
        let t = rand_tensor(&mut rng, &[3, 5, 2]);
        assert_eq!(rot90(&t, 4).unwrap(), t);
        let r1 = rot90(&t, 1).unwrap();
        assert_eq!(r1.shape(), &[5, 3, 2]);
        // Right edge becomes top row under a counterclockwise turn.
        assert_eq!(r1.get(&[0, 0, 0]), t.get(&[0, 4, 0]));
        assert_eq!(rot90(&r1, 3).unwrap(), t);
    }
}
