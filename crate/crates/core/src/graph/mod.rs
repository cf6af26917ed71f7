//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] records every operation as a node whose parents always have
//! smaller indices, so the node list is a topological order by construction.
//! [`Graph::backward`] walks it once in reverse from a scalar root.
//!
//! Leaves come in two flavours: [`Graph::leaf`] registers a differentiable
//! input (parameters, or the input image when computing input gradients) and
//! [`Graph::constant`] registers a value that never receives a gradient.
//! Nodes that do not depend on any differentiable leaf are skipped in the
//! backward pass.

mod kernels;
pub mod gradcheck;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::tensor::Tensor;

use kernels::ConvGeom;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial padding mode for [`Graph::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps `H` and `W`; needs odd kernel sides.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2 {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Linear(Var),
    Softmax(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    BoxMean {
        input: Var,
        window: usize,
    },
    WeightedSum {
        input: Var,
        weights: Tensor,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: LabelMap,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation. One graph serves one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every differentiable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_leaf: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.by_leaf.get(&leaf)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_derived(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    /// Cross-correlation of `[C_in, H, W]` input with `[C_out, C_in, kH, kW]` kernel, plus bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        const OP: &str = "conv2d";
        let (cin, h, w) = self.value(input).dims3()?;
        let (cout, kcin, kh, kw) = match self.value(kernel).shape()[..] {
            [a, b, c, d] => (a, b, c, d),
            ref s => return Err(Error::contract(OP, format!("kernel must be rank 4, got {s:?}"))),
        };
        if kcin != cin {
            return Err(Error::contract(
                OP,
                format!("input has {cin} channels but kernel expects {kcin}"),
            ));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::contract(
                OP,
                format!("bias shape {:?} does not match {cout} output channels", self.value(bias).shape()),
            ));
        }
        let (pad_h, pad_w, oh, ow) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::contract(
                        OP,
                        format!("`same` padding needs odd kernel sides, got {kh}x{kw}"),
                    ));
                }
                (kh / 2, kw / 2, h, w)
            }
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::contract(
                        OP,
                        format!("kernel {kh}x{kw} larger than input {h}x{w}"),
                    ));
                }
                (0, 0, h - kh + 1, w - kw + 1)
            }
        };
        let geom = ConvGeom {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            pad_h,
            pad_w,
            oh,
            ow,
        };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &geom,
        );
        let value = Tensor::from_parts(vec![cout, oh, ow], out);
        Ok(self.push_derived(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &[input, kernel, bias],
        ))
    }

    /// 2x2 max pooling with stride 2.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::contract(
                "maxpool2d",
                format!("spatial dims must be even, got {h}x{w}"),
            ));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(input).data(), c, h, w);
        let value = Tensor::from_parts(vec![c, h / 2, w / 2], out);
        Ok(self.push_derived(value, Op::MaxPool2 { input, argmax }, &[input]))
    }

    /// Nearest-neighbour upsampling by 2: every pixel becomes a 2x2 block.
    pub fn upsample_nearest(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        let out = kernels::upsample2_forward(self.value(input).data(), c, h, w);
        let value = Tensor::from_parts(vec![c, 2 * h, 2 * w], out);
        Ok(self.push_derived(value, Op::Upsample2 { input }, &[input]))
    }

    /// Stacks `a` on top of `b` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).dims3()?;
        let (cb, hb, wb) = self.value(b).dims3()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::contract(
                "concat_channels",
                format!("spatial mismatch {ha}x{wa} vs {hb}x{wb}"),
            ));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::from_parts(vec![ca + cb, ha, wa], data);
        Ok(self.push_derived(value, Op::Concat { a, b }, &[a, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push_derived(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push_derived(value, Op::Sigmoid(x), &[x])
    }

    /// Identity activation. Recorded as its own node so network heads show up on the tape.
    pub fn linear(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push_derived(value, Op::Linear(x), &[x])
    }

    /// Per-pixel softmax over the channel axis of `[L, H, W]` logits.
    pub fn softmax_channels(&mut self, logits: Var) -> Result<Var> {
        let (l, _, _) = self.value(logits).dims3()?;
        if l < 2 {
            return Err(Error::contract("softmax_channels", "needs at least two channels"));
        }
        let value = softmax_channels(self.value(logits))?;
        Ok(self.push_derived(value, Op::Softmax(logits), &[logits]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push_derived(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push_derived(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push_derived(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push_derived(value, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).scale(factor);
        self.push_derived(value, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push_derived(value, Op::AddScalar(x), &[x])
    }

    /// Elementwise absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        self.push_derived(value, Op::Abs(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push_derived(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        self.push_derived(value, Op::Mean(x), &[x])
    }

    /// Mean over every `window x window` patch of each channel (stride 1, no padding).
    pub fn box_mean(&mut self, x: Var, window: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        if window == 0 || window > h || window > w {
            return Err(Error::contract(
                "box_mean",
                format!("window {window} does not fit a {h}x{w} image"),
            ));
        }
        let out = kernels::box_mean_forward(self.value(x).data(), c, h, w, window);
        let value = Tensor::from_parts(vec![c, h - window + 1, w - window + 1], out);
        Ok(self.push_derived(value, Op::BoxMean { input: x, window }, &[x]))
    }

    /// `sum(x * weights)` against a constant weight tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        self.value(x).expect_same_shape("weighted_sum", &weights)?;
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push_derived(Tensor::scalar(s), Op::WeightedSum { input: x, weights }, &[x]))
    }

    /// Mean per-pixel cross-entropy between softmax(`logits`) and integer `labels`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &LabelMap) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let (l, h, w) = self.value(logits).dims3()?;
        if (h, w) != (labels.height(), labels.width()) {
            return Err(Error::contract(
                OP,
                format!("logits are {h}x{w}, labels {}x{}", labels.height(), labels.width()),
            ));
        }
        if labels.max_label() as usize >= l {
            return Err(Error::contract(
                OP,
                format!("label {} out of range for {l} classes", labels.max_label()),
            ));
        }
        let probs = softmax_channels(self.value(logits))?;
        let plane = h * w;
        let x = self.value(logits).data();
        let p = probs.data();
        let mut loss = 0.0;
        for (px, &lab) in labels.labels().iter().enumerate() {
            // -log p computed from logits directly to stay finite for saturated pixels
            let m = (0..l).map(|c| x[c * plane + px]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..l).map(|c| (x[c * plane + px] - m).exp()).sum::<f64>().ln();
            loss += lse - x[lab as usize * plane + px];
        }
        let value = Tensor::scalar(loss / plane as f64);
        Ok(self.push_derived(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.clone(),
                probs: p.to_vec(),
            },
            &[logits],
        ))
    }

    /// Reverse pass from a scalar `root`. Returns gradients for every
    /// differentiable leaf; leaves the root does not depend on get zeros.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("root must be scalar, got shape {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        let mut by_leaf = BTreeMap::new();

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                by_leaf.insert(Var(idx), Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        // differentiable leaves created after the root cannot influence it
        for (idx, node) in self.nodes.iter().enumerate().skip(root.0 + 1) {
            if matches!(node.op, Op::Leaf) {
                by_leaf.insert(Var(idx), Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { by_leaf })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let cg = kernels::conv2d_backward(
                    val(*input),
                    val(*kernel),
                    g,
                    geom,
                    (self.wants(*input), self.wants(*kernel), self.wants(*bias)),
                );
                accumulate_opt(grads, *input, cg.input);
                accumulate_opt(grads, *kernel, cg.kernel);
                accumulate_opt(grads, *bias, cg.bias);
            }
            Op::MaxPool2 { input, argmax } => {
                let len = self.nodes[input.0].value.numel();
                accumulate(grads, *input, kernels::maxpool2_backward(g, argmax, len));
            }
            Op::Upsample2 { input } => {
                let (c, h, w) = dims3_unchecked(&self.nodes[input.0].value);
                accumulate(grads, *input, kernels::upsample2_backward(g, c, h, w));
            }
            Op::Concat { a, b } => {
                let na = self.nodes[a.0].value.numel();
                if self.wants(*a) {
                    accumulate(grads, *a, g[..na].to_vec());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g[na..].to_vec());
                }
            }
            Op::Relu(x) => {
                let gx = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gi)| gi * s * (1.0 - s))
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Linear(x) => accumulate(grads, *x, g.to_vec()),
            Op::Softmax(x) => {
                let (l, h, w) = dims3_unchecked(&node.value);
                let plane = h * w;
                let s = node.value.data();
                let mut gx = vec![0.0; l * plane];
                for px in 0..plane {
                    let dot: f64 = (0..l).map(|c| g[c * plane + px] * s[c * plane + px]).sum();
                    for c in 0..l {
                        let i = c * plane + px;
                        gx[i] = s[i] * (g[i] - dot);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.iter().zip(val(*b)).map(|(gi, y)| gi * y).collect());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.iter().zip(val(*a)).map(|(gi, x)| gi * x).collect());
                }
            }
            Op::Div(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                if self.wants(*a) {
                    accumulate(grads, *a, g.iter().zip(xb).map(|(gi, y)| gi / y).collect());
                }
                if self.wants(*b) {
                    let gb = g
                        .iter()
                        .zip(xa.iter().zip(xb))
                        .map(|(gi, (x, y))| -gi * x / (y * y))
                        .collect();
                    accumulate(grads, *b, gb);
                }
            }
            Op::Scale(x, f) => accumulate(grads, *x, g.iter().map(|gi| gi * f).collect()),
            Op::AddScalar(x) => accumulate(grads, *x, g.to_vec()),
            Op::Abs(x) => {
                let gx = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| {
                        if v > 0.0 {
                            gi
                        } else if v < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    })
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::BoxMean { input, window } => {
                let (c, h, w) = dims3_unchecked(&self.nodes[input.0].value);
                accumulate(grads, *input, kernels::box_mean_backward(g, c, h, w, *window));
            }
            Op::WeightedSum { input, weights } => {
                accumulate(grads, *input, weights.data().iter().map(|w| w * g[0]).collect());
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let plane = labels.len();
                let scale = g[0] / plane as f64;
                let mut gx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (px, &lab) in labels.labels().iter().enumerate() {
                    gx[lab as usize * plane + px] -= scale;
                }
                accumulate(grads, *logits, gx);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], target: Var, contribution: Vec<f64>) {
    match &mut grads[target.0] {
        Some(existing) => existing
            .iter_mut()
            .zip(&contribution)
            .for_each(|(e, c)| *e += c),
        slot @ None => *slot = Some(contribution),
    }
}

fn accumulate_opt(grads: &mut [Option<Vec<f64>>], target: Var, contribution: Option<Vec<f64>>) {
    if let Some(c) = contribution {
        accumulate(grads, target, c);
    }
}

fn dims3_unchecked(t: &Tensor) -> (usize, usize, usize) {
    match t.shape()[..] {
        [c, h, w] => (c, h, w),
        _ => unreachable!("rank checked when the node was recorded"),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-pixel softmax over the channel axis, stabilised by subtracting the per-pixel max.
pub fn softmax_channels(logits: &Tensor) -> Result<Tensor> {
    let (l, h, w) = logits.dims3()?;
    let plane = h * w;
    let x = logits.data();
    let mut out = vec![0.0; l * plane];
    for px in 0..plane {
        let m = (0..l).map(|c| x[c * plane + px]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for c in 0..l {
            let e = (x[c * plane + px] - m).exp();
            out[c * plane + px] = e;
            z += e;
        }
        for c in 0..l {
            out[c * plane + px] /= z;
        }
    }
    Ok(Tensor::from_parts(vec![l, h, w], out))
}

#[cfg(test)]
mod tests;
