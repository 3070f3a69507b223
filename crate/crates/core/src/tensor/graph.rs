//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the tape is acyclic by
//! construction and the backward sweep is a single reverse pass.

use super::ops::{self, activation, conv, linear, loss, norm, pool, shape};
use super::ops::{shape::PixelIndex, Conv2dParams};
use super::{shape_err, Tensor, TensorError};
use crate::scalar::Real;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        params: Conv2dParams,
    },
    Relu(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    InstanceNorm {
        input: Var,
        inv_std: Vec<T>,
    },
    L2Normalize {
        input: Var,
        axis: usize,
        norms: Vec<T>,
    },
    ChannelAffine {
        input: Var,
        gamma: Var,
        beta: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    GlobalAvgPool(Var),
    Concat {
        a: Var,
        b: Var,
        axis: usize,
    },
    PadReflect {
        input: Var,
        top: usize,
        left: usize,
    },
    Crop(Var),
    Gather {
        input: Var,
        indices: Vec<PixelIndex>,
    },
    PairLogits {
        anchors: Var,
        candidates: Var,
        scale: T,
    },
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        axis: usize,
        targets: Vec<usize>,
        ignore: Option<usize>,
        probs: Tensor<T>,
    },
    WeightedSum {
        input: Var,
        weights: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradient of a scalar loss with respect to every node that needs one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    branch_hash: Option<u64>,
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            branch_hash: None,
        }
    }

    /// Records a fingerprint of every non-differentiable branch decision
    /// (ReLU sign pattern, max-pool winners). Used by the gradient checker
    /// to discard finite differences that straddle a kink.
    pub fn with_branch_tracking() -> Self {
        Self {
            nodes: Vec::new(),
            branch_hash: Some(0xcbf2_9ce4_8422_2325),
        }
    }

    pub fn branch_fingerprint(&self) -> Option<u64> {
        self.branch_hash
    }

    fn mix(&mut self, word: u64) {
        if let Some(h) = self.branch_hash.as_mut() {
            *h = (*h ^ word).wrapping_mul(FNV_PRIME);
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Leaf without a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite(name));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        params: Conv2dParams,
    ) -> Result<Var, TensorError> {
        let value = ops::conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            params,
        )?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                params,
            },
            &inputs,
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, TensorError> {
        let value = ops::relu(self.value(input));
        if self.branch_hash.is_some() {
            let words: Vec<u64> = self
                .value(input)
                .data()
                .chunks(64)
                .map(|c| c.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | (((v > T::zero()) as u64) << i)))
                .collect();
            words.into_iter().for_each(|w| self.mix(w));
        }
        self.push("relu", value, Op::Relu(input), &[input])
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var, TensorError> {
        let value = ops::softmax(self.value(input), axis)?;
        self.push("softmax", value, Op::Softmax { input, axis }, &[input])
    }

    pub fn instance_norm(&mut self, input: Var, eps: T) -> Result<Var, TensorError> {
        let (value, inv_std) = ops::instance_norm(self.value(input), eps)?;
        self.push("instance_norm", value, Op::InstanceNorm { input, inv_std }, &[input])
    }

    pub fn l2_normalize(&mut self, input: Var, axis: usize, eps: T) -> Result<Var, TensorError> {
        let (value, norms) = ops::l2_normalize(self.value(input), axis, eps)?;
        self.push("l2_normalize", value, Op::L2Normalize { input, axis, norms }, &[input])
    }

    pub fn channel_affine(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let value = ops::channel_affine(self.value(input), self.value(gamma), self.value(beta))?;
        self.push(
            "channel_affine",
            value,
            Op::ChannelAffine { input, gamma, beta },
            &[input, gamma, beta],
        )
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        let value = ops::linear(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push("linear", value, Op::Linear { input, weight, bias }, &inputs)
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var, TensorError> {
        let (value, argmax) = ops::maxpool2(self.value(input))?;
        if self.branch_hash.is_some() {
            for &a in &argmax {
                self.mix(a as u64);
            }
        }
        self.push("maxpool2", value, Op::MaxPool2 { input, argmax }, &[input])
    }

    pub fn upsample_bilinear(&mut self, input: Var, factor: usize) -> Result<Var, TensorError> {
        let value = ops::upsample_bilinear(self.value(input), factor)?;
        self.push("upsample_bilinear", value, Op::Upsample { input, factor }, &[input])
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var, TensorError> {
        let value = ops::global_avg_pool(self.value(input))?;
        self.push("global_avg_pool", value, Op::GlobalAvgPool(input), &[input])
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var, TensorError> {
        let value = ops::concat(self.value(a), self.value(b), axis)?;
        self.push("concat", value, Op::Concat { a, b, axis }, &[a, b])
    }

    pub fn pad_reflect(&mut self, input: Var, pad: usize) -> Result<Var, TensorError> {
        self.pad_reflect_asym(input, pad, pad, pad, pad)
    }

    pub fn pad_reflect_asym(
        &mut self,
        input: Var,
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    ) -> Result<Var, TensorError> {
        let value = shape::pad_reflect_asym(self.value(input), top, bottom, left, right)?;
        self.push("pad_reflect", value, Op::PadReflect { input, top, left }, &[input])
    }

    pub fn crop(&mut self, input: Var, height: usize, width: usize) -> Result<Var, TensorError> {
        let value = ops::crop(self.value(input), height, width)?;
        self.push("crop", value, Op::Crop(input), &[input])
    }

    pub fn gather_pixels(&mut self, input: Var, indices: Vec<PixelIndex>) -> Result<Var, TensorError> {
        let value = ops::gather_pixels(self.value(input), &indices)?;
        self.push("gather_pixels", value, Op::Gather { input, indices }, &[input])
    }

    pub fn pair_logits(&mut self, anchors: Var, candidates: Var, scale: T) -> Result<Var, TensorError> {
        let value = ops::pair_logits(self.value(anchors), self.value(candidates), scale)?;
        self.push(
            "pair_logits",
            value,
            Op::PairLogits {
                anchors,
                candidates,
                scale,
            },
            &[anchors, candidates],
        )
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(input), &[input])
    }

    /// Scalar cross-entropy node; see [`ops::cross_entropy`].
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        axis: usize,
        targets: Vec<usize>,
        ignore: Option<usize>,
    ) -> Result<Var, TensorError> {
        let (loss, probs) = ops::cross_entropy(self.value(logits), axis, &targets, ignore)?;
        let op = Op::CrossEntropy {
            logits,
            axis,
            targets,
            ignore,
            probs,
        };
        self.push("cross_entropy", Tensor::scalar(loss), op, &[logits])
    }

    /// `sum(input * weights)` as a scalar; weights are constants.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor<T>) -> Result<Var, TensorError> {
        if weights.shape() != self.value(input).shape() {
            return Err(shape_err("weighted_sum", "weights must match input shape"));
        }
        let total: T = self
            .value(input)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        self.push("weighted_sum", Tensor::scalar(total), Op::WeightedSum { input, weights }, &[input])
    }

    /// Reverse sweep from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err("backward", "loss must be a single element"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let send = |v: Var, t: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match grads[v.0].as_mut() {
                    Some(acc) => acc.add_scaled(&t, T::one()).expect("gradient shape"),
                    None => grads[v.0] = Some(t),
                }
            };
            let wants = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    params,
                } => {
                    let r = conv::conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        bias.is_some_and(wants),
                        *params,
                        &g,
                        wants(*input),
                        wants(*kernel),
                    )?;
                    if let Some(t) = r.input {
                        send(*input, t, &mut grads);
                    }
                    if let Some(t) = r.kernel {
                        send(*kernel, t, &mut grads);
                    }
                    if let (Some(b), Some(t)) = (bias, r.bias) {
                        send(*b, t, &mut grads);
                    }
                }
                Op::Relu(input) => {
                    let t = activation::relu_backward(self.value(*input), &g);
                    send(*input, t, &mut grads);
                }
                Op::Softmax { input, axis } => {
                    let t = activation::softmax_backward(&node.value, &g, *axis)?;
                    send(*input, t, &mut grads);
                }
                Op::InstanceNorm { input, inv_std } => {
                    let t = norm::instance_norm_backward(&node.value, inv_std, &g);
                    send(*input, t, &mut grads);
                }
                Op::L2Normalize { input, axis, norms } => {
                    let t = norm::l2_normalize_backward(&node.value, norms, *axis, &g)?;
                    send(*input, t, &mut grads);
                }
                Op::ChannelAffine { input, gamma, beta } => {
                    let (dx, dg, db) =
                        norm::channel_affine_backward(self.value(*input), self.value(*gamma), &g);
                    send(*input, dx, &mut grads);
                    send(*gamma, dg, &mut grads);
                    send(*beta, db, &mut grads);
                }
                Op::Linear { input, weight, bias } => {
                    let (dx, dw, db) =
                        linear::linear_backward(self.value(*input), self.value(*weight), &g);
                    send(*input, dx, &mut grads);
                    send(*weight, dw, &mut grads);
                    if let Some(b) = bias {
                        send(*b, db, &mut grads);
                    }
                }
                Op::MaxPool2 { input, argmax } => {
                    let t = pool::maxpool2_backward(self.value(*input).shape(), argmax, &g);
                    send(*input, t, &mut grads);
                }
                Op::Upsample { input, factor } => {
                    let t = pool::upsample_bilinear_backward(self.value(*input).shape(), *factor, &g);
                    send(*input, t, &mut grads);
                }
                Op::GlobalAvgPool(input) => {
                    let t = pool::global_avg_pool_backward(self.value(*input).shape(), &g);
                    send(*input, t, &mut grads);
                }
                Op::Concat { a, b, axis } => {
                    let (da, db) =
                        shape::concat_backward(&g, self.value(*a).shape(), self.value(*b).shape(), *axis);
                    send(*a, da, &mut grads);
                    send(*b, db, &mut grads);
                }
                Op::PadReflect { input, top, left } => {
                    let t = shape::pad_reflect_backward(self.value(*input).shape(), *top, *left, &g);
                    send(*input, t, &mut grads);
                }
                Op::Crop(input) => {
                    let t = shape::crop_backward(self.value(*input).shape(), &g);
                    send(*input, t, &mut grads);
                }
                Op::Gather { input, indices } => {
                    let t = shape::gather_pixels_backward(self.value(*input).shape(), indices, &g);
                    send(*input, t, &mut grads);
                }
                Op::PairLogits {
                    anchors,
                    candidates,
                    scale,
                } => {
                    let (da, dc) = shape::pair_logits_backward(
                        self.value(*anchors),
                        self.value(*candidates),
                        *scale,
                        &g,
                    );
                    send(*anchors, da, &mut grads);
                    send(*candidates, dc, &mut grads);
                }
                Op::Reshape(input) => {
                    let t = g.reshape(self.value(*input).shape())?;
                    send(*input, t, &mut grads);
                }
                Op::CrossEntropy {
                    logits,
                    axis,
                    targets,
                    ignore,
                    probs,
                } => {
                    let t = loss::cross_entropy_backward(probs, *axis, targets, *ignore, g.item())?;
                    send(*logits, t, &mut grads);
                }
                Op::WeightedSum { input, weights } => {
                    let t = weights.map(|w| w * g.item());
                    send(*input, t, &mut grads);
                }
            }
        }
        Ok(Gradients { grads })
    }
}
