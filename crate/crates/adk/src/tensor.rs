//! Dense row-major tensors over `f32`/`f64`.
//!
//! Images and feature maps use height x width x channel order with the
//! channel axis innermost; convolution weights use out x in x kh x kw.
//! All arithmetic helpers here are value-level (no gradient tracking);
//! accumulations run in a fixed sequential order so results are identical
//! across runs and thread counts.

use crate::error::{Error, Result};

/// Element type for tensors: `f32` for training, `f64` for high-precision
/// verification such as finite-difference gradient checks.
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> f32 {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> f64 {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Maximum supported rank (convolution weights and kernel fields need 4-5 axes).
pub const MAX_RANK: usize = 5;

/// Dense row-major tensor: the last axis is contiguous in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn validate_shape(op: &'static str, shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::InvalidShape {
            op,
            msg: format!("rank must be 1..={MAX_RANK}, got {}", shape.len()),
        });
    }
    let mut n: usize = 1;
    for &e in shape {
        if e == 0 {
            return Err(Error::InvalidShape {
                op,
                msg: format!("zero extent in {shape:?}"),
            });
        }
        n = n.checked_mul(e).ok_or_else(|| Error::InvalidShape {
            op,
            msg: format!("element count overflow for {shape:?}"),
        })?;
    }
    Ok(n)
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor from a shape and a row-major element vector.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n = validate_shape("Tensor::new", &shape)?;
        if data.len() != n {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                msg: format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    /// Constant tensor of the given shape.
    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        let n = validate_shape("Tensor::full", &shape)?;
        Ok(Tensor {
            shape,
            data: vec![value; n],
        })
    }

    /// Rank-1 single-element tensor, used for scalar losses.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Tensor filled by an index-to-value function (row-major visit order).
    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let shape = shape.into();
        let n = validate_shape("Tensor::from_fn", &shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total element count.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // zero extents are rejected at construction
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major flat offset of a multi-index. Panics on rank or bounds
    /// violations; intended for tests and small-scale access.
    pub fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.rank(), "index rank mismatch");
        let mut off = 0;
        for (ax, (&i, &e)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(i < e, "index {i} out of bounds for axis {ax} (extent {e})");
            off = off * e + i;
        }
        off
    }

    /// Element read by multi-index (panics on bad index; see [`Self::offset`]).
    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    /// Element write by multi-index (panics on bad index; see [`Self::offset`]).
    pub fn set(&mut self, idx: &[usize], value: T) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n = validate_shape("Tensor::reshape", &shape)?;
        if n != self.data.len() {
            return Err(Error::InvalidShape {
                op: "Tensor::reshape",
                msg: format!(
                    "cannot reshape {:?} ({} elements) to {shape:?} ({n} elements)",
                    self.shape,
                    self.data.len()
                ),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combine of two same-shape tensors.
    pub fn zip_map(&self, rhs: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Same-shape combine for internal use where shapes are guaranteed by
    /// construction. Panics on mismatch.
    pub(crate) fn zip_unchecked(&self, rhs: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, rhs.shape, "internal shape invariant violated");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn binary(&self, rhs: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == rhs.shape {
            return self.zip_map(rhs, op, f);
        }
        if broadcasts_over_last(&self.shape, &rhs.shape) {
            let inner = *self.shape.last().expect("rank >= 1");
            let f = &f;
            let data = self
                .data
                .chunks_exact(inner)
                .zip(&rhs.data)
                .flat_map(|(chunk, &b)| chunk.iter().map(move |&a| f(a, b)))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        Err(Error::ShapeMismatch {
            op,
            lhs: self.shape.clone(),
            rhs: rhs.shape.clone(),
        })
    }

    /// Elementwise sum. The right operand may have last extent 1 with all
    /// other extents equal, in which case it broadcasts along the last axis.
    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.binary(rhs, "add", |a, b| a + b)
    }

    /// Elementwise difference (same broadcast rule as [`Self::add`]).
    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.binary(rhs, "sub", |a, b| a - b)
    }

    /// Elementwise product (same broadcast rule as [`Self::add`]).
    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        self.binary(rhs, "mul", |a, b| a * b)
    }

    /// Elementwise quotient (same broadcast rule as [`Self::add`]).
    pub fn div(&self, rhs: &Self) -> Result<Self> {
        self.binary(rhs, "div", |a, b| a / b)
    }

    /// Add a scalar to every element.
    pub fn add_scalar(&self, s: T) -> Self {
        self.map(|v| v + s)
    }

    /// Multiply every element by a scalar.
    pub fn mul_scalar(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// Elementwise absolute value.
    pub fn abs(&self) -> Self {
        self.map(|v| v.abs())
    }

    /// Sum of all elements, accumulated sequentially in element order.
    pub fn sum_all(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Mean of all elements.
    pub fn mean_all(&self) -> T {
        self.sum_all() / T::from_f64(self.len() as f64)
    }

    fn reduce_last(&self, init: impl Fn(T) -> T, f: impl Fn(T, T) -> T) -> Self {
        let inner = *self.shape.last().expect("rank >= 1");
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") = 1;
        let data = self
            .data
            .chunks_exact(inner)
            .map(|chunk| chunk[1..].iter().fold(init(chunk[0]), |acc, &v| f(acc, v)))
            .collect();
        Tensor { shape, data }
    }

    /// Sum over the last axis; the reduced axis is kept with extent 1.
    pub fn sum_last(&self) -> Self {
        self.reduce_last(|v| v, |a, b| a + b)
    }

    /// Minimum over the last axis; the reduced axis is kept with extent 1.
    pub fn min_last(&self) -> Self {
        self.reduce_last(|v| v, |a, b| if b < a { b } else { a })
    }

    /// Maximum over the last axis; the reduced axis is kept with extent 1.
    pub fn max_last(&self) -> Self {
        self.reduce_last(|v| v, |a, b| if b > a { b } else { a })
    }

    /// Minimum over the last axis plus, per slice, the flat offset of the
    /// first element attaining it (gradient routing picks the first winner
    /// on ties).
    pub(crate) fn min_last_with_arg(&self) -> (Self, Vec<usize>) {
        self.extremum_last(|cand, best| cand < best)
    }

    /// Maximum over the last axis plus first-winner flat offsets per slice.
    pub(crate) fn max_last_with_arg(&self) -> (Self, Vec<usize>) {
        self.extremum_last(|cand, best| cand > best)
    }

    fn extremum_last(&self, beats: impl Fn(T, T) -> bool) -> (Self, Vec<usize>) {
        let inner = *self.shape.last().expect("rank >= 1");
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") = 1;
        let slices = self.data.len() / inner;
        let mut data = Vec::with_capacity(slices);
        let mut args = Vec::with_capacity(slices);
        for (si, chunk) in self.data.chunks_exact(inner).enumerate() {
            let mut best = chunk[0];
            let mut arg = 0usize;
            for (i, &v) in chunk.iter().enumerate().skip(1) {
                if beats(v, best) {
                    best = v;
                    arg = i;
                }
            }
            data.push(best);
            args.push(si * inner + arg);
        }
        (Tensor { shape, data }, args)
    }

    /// Convert elements to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Error if any element is NaN or infinite.
    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }
}

/// True when `rhs` has the same rank as `lhs`, last extent 1, and all other
/// extents equal: the broadcast form used for per-slice scalars.
fn broadcasts_over_last(lhs: &[usize], rhs: &[usize]) -> bool {
    lhs.len() == rhs.len()
        && rhs.last() == Some(&1)
        && lhs[..lhs.len() - 1] == rhs[..rhs.len() - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_element_count() {
        assert!(Tensor::new(vec![2, 2], vec![1.0f32; 3]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0f32; 4]).is_ok());
    }

    #[test]
    fn new_rejects_zero_extent_and_bad_rank() {
        assert!(Tensor::<f32>::zeros(vec![2, 0, 3]).is_err());
        assert!(Tensor::<f32>::zeros(vec![]).is_err());
        assert!(Tensor::<f32>::zeros(vec![1; 6]).is_err());
        assert!(Tensor::<f32>::zeros(vec![1; 5]).is_ok());
    }

    #[test]
    fn zeros_shape_and_count() {
        let t = Tensor::<f32>::zeros(vec![2, 3, 1]).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn offset_is_row_major_last_axis_fastest() {
        let t = Tensor::new(vec![2, 3, 4], (0..24).map(|i| i as f32).collect()).unwrap();
        assert_eq!(t.offset(&[0, 0, 1]), 1);
        assert_eq!(t.offset(&[0, 1, 0]), 4);
        assert_eq!(t.offset(&[1, 0, 0]), 12);
        assert_eq!(t.get(&[1, 2, 3]), 23.0);
    }

    #[test]
    fn add_rejects_mismatched_shapes() {
        let a = Tensor::<f32>::zeros(vec![2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(vec![3, 2]).unwrap();
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn binary_broadcasts_rhs_with_unit_last_extent() {
        let a = Tensor::new(vec![2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![10.0f32, 100.0]).unwrap();
        let out = a.mul(&b).unwrap();
        assert_eq!(out.data(), &[10.0, 20.0, 30.0, 400.0, 500.0, 600.0]);
        // Broadcast is one-sided: oversized rhs still errors.
        assert!(b.mul(&a).is_err());
    }

    #[test]
    fn sum_last_keeps_reduced_axis() {
        let t = Tensor::<f32>::full(vec![2, 2, 4], 1.0).unwrap();
        let s = t.sum_last();
        assert_eq!(s.shape(), &[2, 2, 1]);
        assert!(s.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn extremum_ties_pick_first_occurrence() {
        let t = Tensor::new(vec![2, 3], vec![5.0f32, 1.0, 1.0, 2.0, 7.0, 7.0]).unwrap();
        let (mn, mn_args) = t.min_last_with_arg();
        assert_eq!(mn.data(), &[1.0, 2.0]);
        assert_eq!(mn_args, vec![1, 3]);
        let (mx, mx_args) = t.max_last_with_arg();
        assert_eq!(mx.data(), &[5.0, 7.0]);
        assert_eq!(mx_args, vec![0, 4]);
        assert_eq!(t.min_last().data(), mn.data());
        assert_eq!(t.max_last().data(), mx.data());
    }

    #[test]
    fn from_fn_visits_row_major() {
        let t = Tensor::<f32>::from_fn(vec![2, 2], |idx| (idx[0] * 10 + idx[1]) as f32).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 10.0, 11.0]);
    }

    #[test]
    fn cast_roundtrip_preserves_f32_values() {
        let t = Tensor::new(vec![3], vec![0.1f32, -2.5, 1.0e-7]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t, back);
    }

    #[test]
    fn check_finite_flags_nan_and_inf() {
        let ok = Tensor::new(vec![2], vec![1.0f32, -1.0]).unwrap();
        assert!(ok.check_finite("test").is_ok());
        let bad = Tensor::new(vec![2], vec![f32::NAN, 0.0]).unwrap();
        assert!(bad.check_finite("test").is_err());
        let inf = Tensor::new(vec![2], vec![f32::INFINITY, 0.0]).unwrap();
        assert!(inf.check_finite("test").is_err());
    }

    #[test]
    fn mean_all_matches_manual() {
        let t = Tensor::new(vec![4], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.mean_all(), 2.5);
    }
}
