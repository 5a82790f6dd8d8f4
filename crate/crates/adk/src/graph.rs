//! Reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a single-use tape: one forward pass appends nodes, then
//! [`Graph::backward`] consumes the tape and returns gradients for the
//! parameter leaves. Each node stores its forward value, its parent handles,
//! and a closure that maps the upstream gradient to per-parent
//! contributions; closures skip parents that cannot require gradients.
//!
//! Every op validates shapes eagerly and rejects non-finite forward values,
//! so a NaN surfaces at the op that produced it rather than at the loss.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ops;
use crate::resample;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node of one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T: Scalar> {
    op: &'static str,
    value: Rc<Tensor<T>>,
    parents: Vec<NodeId>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Gradients returned by [`Graph::backward`], indexed by leaf handle.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a parameter leaf; `None` when the leaf does not
    /// influence the loss.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Remove and return the gradient for a leaf.
    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Single-use reverse-mode tape over dense tensors.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, id: NodeId) -> &Node<T> {
        &self.nodes[id.0]
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.node(id).value
    }

    /// Shared handle to a node's forward value.
    pub fn rc_value(&self, id: NodeId) -> Rc<Tensor<T>> {
        Rc::clone(&self.node(id).value)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.node(id).value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.node(id).requires_grad
    }

    fn push_node(
        &mut self,
        op: &'static str,
        parents: Vec<NodeId>,
        value: Rc<Tensor<T>>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> Result<NodeId> {
        value.check_finite(op)?;
        for p in &parents {
            assert!(p.0 < self.nodes.len(), "node handle from another graph");
        }
        self.nodes.push(Node {
            op,
            value,
            parents,
            requires_grad,
            backward,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn push_op(
        &mut self,
        op: &'static str,
        parents: Vec<NodeId>,
        value: Rc<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Result<NodeId> {
        let requires = parents.iter().any(|&p| self.requires_grad(p));
        let backward = requires.then_some(backward);
        self.push_node(op, parents, value, requires, backward)
    }

    /// Trainable leaf: gradients are retained for it.
    pub fn param(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push_node("param", Vec::new(), Rc::new(value), true, None)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push_node("input", Vec::new(), Rc::new(value), false, None)
    }

    // ---- elementwise ----

    /// Elementwise sum; `b` may broadcast along the last axis (extent 1).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = self.rc_value(a);
        let bv = self.rc_value(b);
        let out = av.add(&bv)?;
        let bcast = bv.shape() != av.shape();
        self.push_op(
            "add",
            vec![a, b],
            Rc::new(out),
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| g.clone());
                let gb = if needs[1] {
                    Some(if bcast { g.sum_last() } else { g.clone() })
                } else {
                    None
                };
                Ok(vec![ga, gb])
            }),
        )
    }

    /// Elementwise difference; `b` may broadcast along the last axis.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = self.rc_value(a);
        let bv = self.rc_value(b);
        let out = av.sub(&bv)?;
        let bcast = bv.shape() != av.shape();
        self.push_op(
            "sub",
            vec![a, b],
            Rc::new(out),
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| g.clone());
                let gb = if needs[1] {
                    let r = if bcast { g.sum_last() } else { g.clone() };
                    Some(r.mul_scalar(-T::one()))
                } else {
                    None
                };
                Ok(vec![ga, gb])
            }),
        )
    }

    /// Elementwise product; `b` may broadcast along the last axis.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = self.rc_value(a);
        let bv = self.rc_value(b);
        let out = av.mul(&bv)?;
        let bcast = bv.shape() != av.shape();
        self.push_op(
            "mul",
            vec![a, b],
            Rc::new(out),
            Box::new(move |g, needs| {
                let ga = if needs[0] { Some(g.mul(&bv)?) } else { None };
                let gb = if needs[1] {
                    let t = g.mul(&av)?;
                    Some(if bcast { t.sum_last() } else { t })
                } else {
                    None
                };
                Ok(vec![ga, gb])
            }),
        )
    }

    /// Elementwise quotient; `b` may broadcast along the last axis.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = self.rc_value(a);
        let bv = self.rc_value(b);
        let out = Rc::new(av.div(&bv)?);
        let bcast = bv.shape() != av.shape();
        let out_b = Rc::clone(&out);
        self.push_op(
            "div",
            vec![a, b],
            Rc::clone(&out),
            Box::new(move |g, needs| {
                let ga = if needs[0] { Some(g.div(&bv)?) } else { None };
                let gb = if needs[1] {
                    // d(a/b)/db = -a/b^2 = -out/b
                    let t = g.mul(&out_b)?.div(&bv)?.mul_scalar(-T::one());
                    Some(if bcast { t.sum_last() } else { t })
                } else {
                    None
                };
                Ok(vec![ga, gb])
            }),
        )
    }

    /// Add a constant to every element.
    pub fn add_scalar(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let out = self.value(a).add_scalar(c);
        self.push_op(
            "add_scalar",
            vec![a],
            Rc::new(out),
            Box::new(|g, _| Ok(vec![Some(g.clone())])),
        )
    }

    /// Multiply every element by a constant.
    pub fn mul_scalar(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let out = self.value(a).mul_scalar(c);
        self.push_op(
            "mul_scalar",
            vec![a],
            Rc::new(out),
            Box::new(move |g, _| Ok(vec![Some(g.mul_scalar(c))])),
        )
    }

    /// Elementwise max(x, 0).
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.rc_value(a);
        let out = av.map(|v| if v > T::zero() { v } else { T::zero() });
        self.push_op(
            "relu",
            vec![a],
            Rc::new(out),
            Box::new(move |g, _| {
                Ok(vec![Some(g.zip_unchecked(&av, |gi, vi| {
                    if vi > T::zero() {
                        gi
                    } else {
                        T::zero()
                    }
                }))])
            }),
        )
    }

    /// Elementwise absolute value; subgradient 0 at exactly 0.
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.rc_value(a);
        let out = av.abs();
        self.push_op(
            "abs",
            vec![a],
            Rc::new(out),
            Box::new(move |g, _| {
                Ok(vec![Some(g.zip_unchecked(&av, |gi, vi| {
                    if vi > T::zero() {
                        gi
                    } else if vi < T::zero() {
                        -gi
                    } else {
                        T::zero()
                    }
                }))])
            }),
        )
    }

    // ---- reductions ----

    fn extremum_last(&mut self, a: NodeId, minimum: bool) -> Result<NodeId> {
        let av = self.rc_value(a);
        let (out, args) = if minimum {
            av.min_last_with_arg()
        } else {
            av.max_last_with_arg()
        };
        let shape = av.shape().to_vec();
        self.push_op(
            if minimum { "min_last" } else { "max_last" },
            vec![a],
            Rc::new(out),
            Box::new(move |g, _| {
                // Route each slice's gradient to the first extremal element.
                let mut grad = Tensor::zeros(shape.clone()).expect("parent shape is valid");
                for (slice, &at) in args.iter().enumerate() {
                    grad.data_mut()[at] = g.data()[slice];
                }
                Ok(vec![Some(grad)])
            }),
        )
    }

    /// Minimum over the last axis (kept with extent 1); ties route gradient
    /// to the first occurrence.
    pub fn min_last(&mut self, a: NodeId) -> Result<NodeId> {
        self.extremum_last(a, true)
    }

    /// Maximum over the last axis (kept with extent 1); ties route gradient
    /// to the first occurrence.
    pub fn max_last(&mut self, a: NodeId) -> Result<NodeId> {
        self.extremum_last(a, false)
    }

    /// Sum over the last axis, kept with extent 1.
    pub fn sum_last(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.rc_value(a);
        let out = av.sum_last();
        let shape = av.shape().to_vec();
        let inner = *shape.last().expect("rank >= 1");
        self.push_op(
            "sum_last",
            vec![a],
            Rc::new(out),
            Box::new(move |g, _| {
                let mut grad = Tensor::zeros(shape.clone()).expect("parent shape is valid");
                for (chunk, &gv) in grad.data_mut().chunks_exact_mut(inner).zip(g.data()) {
                    chunk.fill(gv);
                }
                Ok(vec![Some(grad)])
            }),
        )
    }

    /// Sum of all elements as a single-element tensor.
    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.rc_value(a);
        let out = Tensor::scalar(av.sum_all());
        let shape = av.shape().to_vec();
        self.push_op(
            "sum_all",
            vec![a],
            Rc::new(out),
            Box::new(move |g, _| {
                Ok(vec![Some(
                    Tensor::full(shape.clone(), g.data()[0]).expect("parent shape is valid"),
                )])
            }),
        )
    }

    /// Mean of all elements as a single-element tensor.
    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.rc_value(a);
        let out = Tensor::scalar(av.mean_all());
        let shape = av.shape().to_vec();
        let n = T::from_f64(av.len() as f64);
        self.push_op(
            "mean_all",
            vec![a],
            Rc::new(out),
            Box::new(move |g, _| {
                Ok(vec![Some(
                    Tensor::full(shape.clone(), g.data()[0] / n).expect("parent shape is valid"),
                )])
            }),
        )
    }

    // ---- structure ----

    /// Reinterpret a node's value with a new shape of equal element count.
    pub fn reshape(&mut self, a: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let av = self.rc_value(a);
        let old = av.shape().to_vec();
        let out = (*av).clone().reshape(shape)?;
        self.push_op(
            "reshape",
            vec![a],
            Rc::new(out),
            Box::new(move |g, _| Ok(vec![Some(g.clone().reshape(old.clone())?)])),
        )
    }

    /// Stack same-shape `[d.., m]` inputs into `[d.., n, m]`, inserting a new
    /// axis before the last.
    pub fn stack_pre_last(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Usage("stack_pre_last needs at least one input".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        for &p in parts {
            if self.value(p).shape() != first {
                return Err(Error::ShapeMismatch {
                    op: "stack_pre_last",
                    lhs: first,
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let n = parts.len();
        let inner = *first.last().expect("rank >= 1");
        let outer: usize = first[..first.len() - 1].iter().product();
        let mut shape = first.clone();
        shape.insert(shape.len() - 1, n);
        let mut data = Vec::with_capacity(outer * n * inner);
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|&p| self.rc_value(p)).collect();
        for o in 0..outer {
            for v in &values {
                data.extend_from_slice(&v.data()[o * inner..][..inner]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let part_shape = first;
        self.push_op(
            "stack_pre_last",
            parts.to_vec(),
            Rc::new(out),
            Box::new(move |g, needs| {
                let mut grads = vec![None; n];
                for (c, slot) in grads.iter_mut().enumerate() {
                    if !needs[c] {
                        continue;
                    }
                    let mut data = Vec::with_capacity(outer * inner);
                    for o in 0..outer {
                        data.extend_from_slice(&g.data()[(o * n + c) * inner..][..inner]);
                    }
                    *slot = Some(Tensor::new(part_shape.clone(), data)?);
                }
                Ok(grads)
            }),
        )
    }

    /// Overwrite whole last-axis slices with a constant where `mask` is set.
    /// Gradient into masked slices is zero; unmasked slices pass through.
    pub fn mask_fill_slices(&mut self, a: NodeId, mask: Vec<bool>, fill: T) -> Result<NodeId> {
        let av = self.rc_value(a);
        let inner = *av.shape().last().expect("rank >= 1");
        let slices = av.len() / inner;
        if mask.len() != slices {
            return Err(Error::InvalidShape {
                op: "mask_fill_slices",
                msg: format!("mask has {} entries for {} slices", mask.len(), slices),
            });
        }
        let mut out = (*av).clone();
        for (chunk, &m) in out.data_mut().chunks_exact_mut(inner).zip(&mask) {
            if m {
                chunk.fill(fill);
            }
        }
        self.push_op(
            "mask_fill_slices",
            vec![a],
            Rc::new(out),
            Box::new(move |g, _| {
                let mut grad = g.clone();
                for (chunk, &m) in grad.data_mut().chunks_exact_mut(inner).zip(&mask) {
                    if m {
                        chunk.fill(T::zero());
                    }
                }
                Ok(vec![Some(grad)])
            }),
        )
    }

    // ---- spatial ----

    /// Mirror-pad a height x width x channels node on all sides.
    pub fn reflect_pad(&mut self, a: NodeId, pad: usize) -> Result<NodeId> {
        let av = self.rc_value(a);
        let out = ops::reflect_pad(&av, pad)?;
        let (h, w) = (av.shape()[0], av.shape()[1]);
        self.push_op(
            "reflect_pad",
            vec![a],
            Rc::new(out),
            Box::new(move |g, _| Ok(vec![Some(ops::reflect_pad_backward(g, h, w, pad)?)])),
        )
    }

    /// Valid cross-correlation of `x` with weights `w` and bias `b`.
    pub fn conv_valid(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xv = self.rc_value(x);
        let wv = self.rc_value(w);
        let bv = self.rc_value(b);
        let out = ops::conv_valid(&xv, &wv, &bv)?;
        self.push_op(
            "conv_valid",
            vec![x, w, b],
            Rc::new(out),
            Box::new(move |g, needs| {
                let gx = if needs[0] {
                    Some(ops::conv_valid_backward_input(g, &wv)?)
                } else {
                    None
                };
                let gw = if needs[1] {
                    Some(ops::conv_valid_backward_weight(g, &xv, wv.shape())?)
                } else {
                    None
                };
                let gb = if needs[2] {
                    Some(ops::conv_valid_backward_bias(g)?)
                } else {
                    None
                };
                Ok(vec![gx, gw, gb])
            }),
        )
    }

    /// Same-size convolution: reflection padding by `(k-1)/2` followed by a
    /// valid cross-correlation. Requires odd square kernels.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let wshape = self.shape(w).to_vec();
        let [_, _, kh, kw] = wshape[..] else {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("expected rank-4 weight, got {wshape:?}"),
            });
        };
        if kh != kw || kh % 2 == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("same-size convolution needs odd square kernels, got {kh}x{kw}"),
            });
        }
        let pad = (kh - 1) / 2;
        let padded = if pad == 0 { x } else { self.reflect_pad(x, pad)? };
        self.conv_valid(padded, w, b)
    }

    /// Space-to-depth block folding (see [`ops::pixel_unshuffle`]).
    pub fn pixel_unshuffle(&mut self, a: NodeId, s: usize) -> Result<NodeId> {
        let av = self.rc_value(a);
        let out = ops::pixel_unshuffle(&av, s)?;
        self.push_op(
            "pixel_unshuffle",
            vec![a],
            Rc::new(out),
            Box::new(move |g, _| Ok(vec![Some(ops::pixel_shuffle(g, s)?)])),
        )
    }

    /// Depth-to-space inverse of [`Graph::pixel_unshuffle`].
    pub fn pixel_shuffle(&mut self, a: NodeId, s: usize) -> Result<NodeId> {
        let av = self.rc_value(a);
        let out = ops::pixel_shuffle(&av, s)?;
        self.push_op(
            "pixel_shuffle",
            vec![a],
            Rc::new(out),
            Box::new(move |g, _| Ok(vec![Some(ops::pixel_unshuffle(g, s)?)])),
        )
    }

    /// Resample `hr` with a per-pixel, per-channel kernel field
    /// `[h, w, c, k, k]` (see [`resample::apply_kernel_field`]).
    pub fn apply_kernels(&mut self, hr: NodeId, kernels: NodeId, scale: usize) -> Result<NodeId> {
        let hv = self.rc_value(hr);
        let kv = self.rc_value(kernels);
        let out = resample::apply_kernel_field(&hv, &kv, scale)?;
        self.push_op(
            "apply_kernels",
            vec![hr, kernels],
            Rc::new(out),
            Box::new(move |g, needs| {
                let gh = if needs[0] {
                    Some(resample::apply_kernel_field_backward_image(
                        g, &kv, hv.shape(), scale,
                    )?)
                } else {
                    None
                };
                let gk = if needs[1] {
                    Some(resample::apply_kernel_field_backward_kernels(
                        g, &hv, kv.shape(), scale,
                    )?)
                } else {
                    None
                };
                Ok(vec![gh, gk])
            }),
        )
    }

    /// Mean absolute difference between two same-shape nodes.
    pub fn l1_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let diff = self.sub(pred, target)?;
        let mag = self.abs(diff)?;
        self.mean_all(mag)
    }

    /// Consume the tape and back-propagate from a single-element `loss`
    /// node. Returns gradients for parameter leaves; leaves that do not
    /// influence the loss get `None`.
    pub fn backward(mut self, loss: NodeId) -> Result<Gradients<T>> {
        assert!(loss.0 < self.nodes.len(), "node handle from another graph");
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a single-element loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(back) = self.nodes[id].backward.take() else {
                continue; // parameter leaf: keep its accumulated gradient
            };
            let Some(g) = grads[id].take() else {
                continue; // not on any path to the loss
            };
            let parents = self.nodes[id].parents.clone();
            let needs: Vec<bool> = parents.iter().map(|&p| self.requires_grad(p)).collect();
            let contribs = back(&g, &needs)?;
            debug_assert_eq!(contribs.len(), parents.len());
            for (&pid, contrib) in parents.iter().zip(contribs) {
                let Some(c) = contrib else { continue };
                if c.shape() != self.shape(pid) {
                    return Err(Error::InvalidShape {
                        op: self.nodes[id].op,
                        msg: format!(
                            "backward produced shape {:?} for parent of shape {:?}",
                            c.shape(),
                            self.shape(pid)
                        ),
                    });
                }
                match &mut grads[pid.0] {
                    Some(acc) => *acc = acc.zip_unchecked(&c, |a, b| a + b),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(rng: &mut StdRng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    /// Compare the tape gradient of `build` (param tensor -> scalar loss)
    /// against central differences at every coordinate of `x0`.
    fn fd_check(
        build: &dyn Fn(&mut Graph<f64>, NodeId) -> NodeId,
        x0: &Tensor<f64>,
        tol: f64,
    ) {
        let mut g = Graph::new();
        let p = g.param(x0.clone()).unwrap();
        let loss = build(&mut g, p);
        let grads = g.backward(loss).unwrap();
        let analytic = grads.get(p).expect("param influences loss").clone();
        let eval = |x: &Tensor<f64>| {
            let mut g = Graph::new();
            let p = g.param(x.clone()).unwrap();
            let loss = build(&mut g, p);
            g.value(loss).data()[0]
        };
        let h = 1e-6;
        for at in 0..x0.len() {
            let mut plus = x0.clone();
            plus.data_mut()[at] += h;
            let mut minus = x0.clone();
            minus.data_mut()[at] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[at];
            let denom = a.abs().max(fd.abs()).max(1.0);
            assert!(
                ((a - fd) / denom).abs() <= tol,
                "coord {at}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[2, 3, 4]);
        let other = rand_tensor(&mut rng, &[2, 3, 4]).map(|v| v + 3.0); // away from 0 for div
        let r = rand_tensor(&mut rng, &[2, 3, 4]);
        for which in ["add", "sub", "mul", "div"] {
            let other = other.clone();
            let r = r.clone();
            fd_check(
                &move |g, p| {
                    let o = g.input(other.clone()).unwrap();
                    let y = match which {
                        "add" => g.add(p, o).unwrap(),
                        "sub" => g.sub(p, o).unwrap(),
                        "mul" => g.mul(p, o).unwrap(),
                        _ => g.div(p, o).unwrap(),
                    };
                    let proj = g.input(r.clone()).unwrap();
                    let w = g.mul(y, proj).unwrap();
                    g.sum_all(w).unwrap()
                },
                &x,
                1e-7,
            );
        }
    }

    #[test]
    fn broadcast_denominator_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(2);
        let num = rand_tensor(&mut rng, &[2, 2, 5]);
        let den = rand_tensor(&mut rng, &[2, 2, 1]).map(|v| v + 2.0);
        let r = rand_tensor(&mut rng, &[2, 2, 5]);
        // Gradient through the broadcast denominator.
        let num_c = num.clone();
        let r_c = r.clone();
        fd_check(
            &move |g, p| {
                let n = g.input(num_c.clone()).unwrap();
                let y = g.div(n, p).unwrap();
                let proj = g.input(r_c.clone()).unwrap();
                let w = g.mul(y, proj).unwrap();
                g.sum_all(w).unwrap()
            },
            &den,
            1e-7,
        );
        // Gradient through the numerator of a broadcast product.
        let den_c = den.clone();
        fd_check(
            &move |g, p| {
                let d = g.input(den_c.clone()).unwrap();
                let y = g.mul(p, d).unwrap();
                let proj = g.input(r.clone()).unwrap();
                let w = g.mul(y, proj).unwrap();
                g.sum_all(w).unwrap()
            },
            &num,
            1e-7,
        );
    }

    #[test]
    fn nonlinearities_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(3);
        // Keep samples away from the relu/abs kinks relative to the fd step.
        let x = rand_tensor(&mut rng, &[3, 4]).map(|v| if v.abs() < 0.01 { v + 0.05 } else { v });
        fd_check(
            &|g, p| {
                let y = g.relu(p).unwrap();
                g.sum_all(y).unwrap()
            },
            &x,
            1e-7,
        );
        fd_check(
            &|g, p| {
                let y = g.abs(p).unwrap();
                g.mean_all(y).unwrap()
            },
            &x,
            1e-7,
        );
    }

    #[test]
    fn reductions_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, &[2, 3, 6]);
        let r = rand_tensor(&mut rng, &[2, 3, 1]);
        for which in ["min", "max", "sum"] {
            let r = r.clone();
            fd_check(
                &move |g, p| {
                    let y = match which {
                        "min" => g.min_last(p).unwrap(),
                        "max" => g.max_last(p).unwrap(),
                        _ => g.sum_last(p).unwrap(),
                    };
                    let proj = g.input(r.clone()).unwrap();
                    let w = g.mul(y, proj).unwrap();
                    g.sum_all(w).unwrap()
                },
                &x,
                1e-6,
            );
        }
    }

    #[test]
    fn extremum_tie_routes_to_first_occurrence() {
        let x = Tensor::new(vec![1, 4], vec![2.0f64, 7.0, 7.0, 1.0]).unwrap();
        let mut g = Graph::new();
        let p = g.param(x).unwrap();
        let y = g.max_last(p).unwrap();
        let loss = g.sum_all(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn spatial_ops_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[4, 4, 2]);
        let r_pad = rand_tensor(&mut rng, &[6, 6, 2]);
        fd_check(
            &move |g, p| {
                let y = g.reflect_pad(p, 1).unwrap();
                let proj = g.input(r_pad.clone()).unwrap();
                let w = g.mul(y, proj).unwrap();
                g.sum_all(w).unwrap()
            },
            &x,
            1e-7,
        );
        let x2 = rand_tensor(&mut rng, &[4, 4, 8]);
        let r_shuf = rand_tensor(&mut rng, &[8, 8, 2]);
        fd_check(
            &move |g, p| {
                let y = g.pixel_shuffle(p, 2).unwrap();
                let proj = g.input(r_shuf.clone()).unwrap();
                let w = g.mul(y, proj).unwrap();
                g.sum_all(w).unwrap()
            },
            &x2,
            1e-7,
        );
    }

    #[test]
    fn conv2d_matches_finite_differences_for_all_parameter_roles() {
        let mut rng = StdRng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[5, 5, 2]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]).mul_scalar(0.5);
        let b = rand_tensor(&mut rng, &[3]);
        let r = rand_tensor(&mut rng, &[5, 5, 3]);
        let (xc, bc, rc) = (x.clone(), b.clone(), r.clone());
        // w as the differentiated parameter
        fd_check(
            &move |g, p| {
                let xi = g.input(xc.clone()).unwrap();
                let bi = g.input(bc.clone()).unwrap();
                let y = g.conv2d(xi, p, bi).unwrap();
                let proj = g.input(rc.clone()).unwrap();
                let m = g.mul(y, proj).unwrap();
                g.sum_all(m).unwrap()
            },
            &w,
            1e-6,
        );
        // x as the differentiated parameter (exercises reflect_pad backward)
        let (wc, bc, rc) = (w.clone(), b.clone(), r.clone());
        fd_check(
            &move |g, p| {
                let wi = g.input(wc.clone()).unwrap();
                let bi = g.input(bc.clone()).unwrap();
                let y = g.conv2d(p, wi, bi).unwrap();
                let proj = g.input(rc.clone()).unwrap();
                let m = g.mul(y, proj).unwrap();
                g.sum_all(m).unwrap()
            },
            &x,
            1e-6,
        );
        // b as the differentiated parameter
        fd_check(
            &move |g, p| {
                let xi = g.input(x.clone()).unwrap();
                let wi = g.input(w.clone()).unwrap();
                let y = g.conv2d(xi, wi, p).unwrap();
                let proj = g.input(r.clone()).unwrap();
                let m = g.mul(y, proj).unwrap();
                g.sum_all(m).unwrap()
            },
            &b,
            1e-6,
        );
    }

    #[test]
    fn stack_and_mask_fill_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, &[2, 2, 4]);
        let other = rand_tensor(&mut rng, &[2, 2, 4]);
        let r = rand_tensor(&mut rng, &[2, 2, 2, 4]);
        fd_check(
            &move |g, p| {
                let o = g.input(other.clone()).unwrap();
                let y = g.stack_pre_last(&[p, o]).unwrap();
                let proj = g.input(r.clone()).unwrap();
                let m = g.mul(y, proj).unwrap();
                g.sum_all(m).unwrap()
            },
            &x,
            1e-7,
        );
        let mask = vec![true, false, false, true];
        let r2 = rand_tensor(&mut rng, &[2, 2, 4]);
        fd_check(
            &move |g, p| {
                let y = g.mask_fill_slices(p, mask.clone(), 7.0).unwrap();
                let proj = g.input(r2.clone()).unwrap();
                let m = g.mul(y, proj).unwrap();
                g.sum_all(m).unwrap()
            },
            &x,
            1e-7,
        );
    }

    #[test]
    fn mask_fill_zeroes_gradient_in_masked_slices() {
        let x = Tensor::new(vec![2, 3], (1..=6).map(|v| v as f64).collect()).unwrap();
        let mut g = Graph::new();
        let p = g.param(x).unwrap();
        let y = g.mask_fill_slices(p, vec![true, false], 0.5).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5, 0.5, 4.0, 5.0, 6.0]);
        let loss = g.sum_all(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_accumulates_across_multiple_uses() {
        let x = Tensor::scalar(3.0f64);
        let mut g = Graph::new();
        let p = g.param(x).unwrap();
        let y = g.add(p, p).unwrap();
        let z = g.mul(y, p).unwrap(); // z = 2x^2, dz/dx = 4x = 12
        let loss = g.sum_all(z).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[12.0]);
    }

    #[test]
    fn inputs_get_no_gradient_and_unreached_params_get_none() {
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(1.0f64)).unwrap();
        let b = g.param(Tensor::scalar(2.0f64)).unwrap();
        let c = g.input(Tensor::scalar(4.0f64)).unwrap();
        let y = g.mul(a, c).unwrap();
        let loss = g.sum_all(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[4.0]);
        assert!(grads.get(b).is_none());
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let p = g.param(Tensor::<f64>::zeros(vec![2, 2]).unwrap()).unwrap();
        let y = g.relu(p).unwrap();
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn division_by_zero_surfaces_as_non_finite_error() {
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(1.0f64)).unwrap();
        let z = g.input(Tensor::scalar(0.0f64)).unwrap();
        match g.div(a, z) {
            Err(Error::NonFinite { op }) => assert_eq!(op, "div"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
