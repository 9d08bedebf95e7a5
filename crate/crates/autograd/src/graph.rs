//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep. A node needs a
//! gradient only when one of its inputs does; constants and frozen parameters
//! cost nothing on the way back.

use crate::kernels::{self, ConvGeom};
use crate::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probabilities fed to a logarithm are clamped to `[eps, 1 - eps]`.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    LeakyRelu { x: Var, slope: f64 },
    Tanh { x: Var },
    AvgPool2 { x: Var },
    Upsample2 { x: Var },
    ConcatChannels { a: Var, b: Var },
    GlobalAvgPool { x: Var },
    Linear { x: Var, w: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    L1Mean { a: Var, b: Var },
    SigmoidNll { logits: Var, target_real: bool },
    CrossEntropy { logits: Var, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf; gradients flow into it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Frozen leaf; treated as a constant by `backward`.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let ws = wv.shape();
        assert_eq!(ws.len(), 4, "conv weight must be [out, in, k, k]");
        assert_eq!(ws[2], ws[3], "square kernels only");
        let dims = xv.dims4();
        assert_eq!(dims.1, ws[1], "conv input has {} channels, weight expects {}", dims.1, ws[1]);
        assert_eq!(self.value(b).shape(), &[ws[0]], "conv bias shape");
        let geom = ConvGeom::new(dims, ws[0], ws[2], stride, pad);
        let out = kernels::conv2d_forward(xv.data(), wv.data(), self.value(b).data(), &geom);
        let shape = vec![geom.n, geom.c_out, geom.h_out, geom.w_out];
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Tensor::new(shape, out), Op::Conv2d { x, w, b, geom }, needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64_lossy(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        let needs = self.needs(x);
        self.push(out, Op::LeakyRelu { x, slope }, needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let needs = self.needs(x);
        self.push(out, Op::Tanh { x }, needs)
    }

    /// 2×2 average pooling; spatial dims must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims, got {h}x{w}");
        let (ho, wo) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let quarter = T::from_f64_lossy(0.25);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for plane in 0..n * c {
            let src = &xs[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for y in 0..ho {
                for xx in 0..wo {
                    let i = 2 * y * w + 2 * xx;
                    dst[y * wo + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
                }
            }
        }
        let needs = self.needs(x);
        self.push(Tensor::new(vec![n, c, ho, wo], out), Op::AvgPool2 { x }, needs)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (ho, wo) = (h * 2, w * 2);
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for plane in 0..n * c {
            let src = &xs[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for y in 0..ho {
                for xx in 0..wo {
                    dst[y * wo + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let needs = self.needs(x);
        self.push(Tensor::new(vec![n, c, ho, wo], out), Op::Upsample2 { x }, needs)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (n, ca, h, w) = self.value(a).dims4();
        let (nb, cb, hb, wb) = self.value(b).dims4();
        assert_eq!((n, h, w), (nb, hb, wb), "concat_channels shape mismatch");
        let plane = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            out.extend_from_slice(&self.value(a).data()[i * ca * plane..(i + 1) * ca * plane]);
            out.extend_from_slice(&self.value(b).data()[i * cb * plane..(i + 1) * cb * plane]);
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![n, ca + cb, h, w], out), Op::ConcatChannels { a, b }, needs)
    }

    /// `[N, C, H, W] -> [N, C]`
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let inv = T::from_f64_lossy(1.0 / (h * w) as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let needs = self.needs(x);
        self.push(Tensor::new(vec![n, c], out), Op::GlobalAvgPool { x }, needs)
    }

    /// `x: [N, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(xs.len(), 2, "linear input must be [N, in]");
        assert_eq!(ws.len(), 2, "linear weight must be [out, in]");
        assert_eq!(xs[1], ws[1], "linear input width {} != weight width {}", xs[1], ws[1]);
        assert_eq!(self.value(b).shape(), &[ws[0]], "linear bias shape");
        let y = kernels::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            xs[0],
            xs[1],
            ws[0],
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Tensor::new(vec![xs[0], ws[0]], y), Op::Linear { x, w, b }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shape mismatch");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Add { a, b }, needs)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::from_f64_lossy(factor);
        let out = self.value(x).map(|v| v * f);
        let needs = self.needs(x);
        self.push(out, Op::Scale { x, factor }, needs)
    }

    /// Mean absolute difference over every element.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "l1_mean shape mismatch");
        let n = av.len().max(1) as f64;
        let s: f64 = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y).abs().as_f64()).sum();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::scalar(T::from_f64_lossy(s / n)), Op::L1Mean { a, b }, needs)
    }

    /// Mean negative log-likelihood of a sigmoid output against a fixed
    /// real (`p`) or fake (`1 - p`) target. `logits` is `[N, 1]` or `[N]`.
    pub fn sigmoid_nll(&mut self, logits: Var, target_real: bool) -> Var {
        let lv = self.value(logits);
        let n = lv.len().max(1) as f64;
        let s: f64 = lv
            .data()
            .iter()
            .map(|&z| {
                let p = sigmoid(z.as_f64()).clamp(LOG_EPS, 1.0 - LOG_EPS);
                if target_real {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        let needs = self.needs(logits);
        self.push(Tensor::scalar(T::from_f64_lossy(s / n)), Op::SigmoidNll { logits, target_real }, needs)
    }

    /// Mean softmax cross-entropy; `logits` is `[N, K]`, one label per row.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        let shape = lv.shape();
        assert_eq!(shape.len(), 2, "cross_entropy logits must be [N, K]");
        let (n, k) = (shape[0], shape[1]);
        assert_eq!(labels.len(), n, "one label per logit row");
        let mut s = 0.0;
        for (row, &y) in lv.data().chunks(k).zip(labels) {
            assert!(y < k, "label {y} out of range for {k} classes");
            let p = softmax_f64(row);
            s -= p[y].max(LOG_EPS).ln();
        }
        let needs = self.needs(logits);
        let value = Tensor::scalar(T::from_f64_lossy(s / n.max(1) as f64));
        self.push(value, Op::CrossEntropy { logits, labels: labels.to_vec() }, needs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![T::one()]));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.backprop_node(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, idx: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                if self.needs(*w) || self.needs(*b) {
                    let mut dw = Tensor::zeros(self.value(*w).shape().to_vec());
                    let mut db = Tensor::zeros(self.value(*b).shape().to_vec());
                    kernels::conv2d_backward_params(self.value(*x).data(), dy.data(), geom, dw.data_mut(), db.data_mut());
                    if self.needs(*w) {
                        accumulate(&mut grads[w.0], dw);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], db);
                    }
                }
                if self.needs(*x) {
                    let mut dx = Tensor::zeros(self.value(*x).shape().to_vec());
                    kernels::conv2d_backward_input(self.value(*w).data(), dy.data(), geom, dx.data_mut());
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let s = T::from_f64_lossy(*slope);
                let xv = self.value(*x);
                let data = xv.data().iter().zip(dy.data()).map(|(&v, &g)| if v > T::zero() { g } else { g * s }).collect();
                accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), data));
            }
            Op::Tanh { x } => {
                let yv = &node.value;
                let data = yv.data().iter().zip(dy.data()).map(|(&y, &g)| g * (T::one() - y * y)).collect();
                accumulate(&mut grads[x.0], Tensor::new(yv.shape().to_vec(), data));
            }
            Op::AvgPool2 { x } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let (ho, wo) = (h / 2, w / 2);
                let quarter = T::from_f64_lossy(0.25);
                let mut dx = vec![T::zero(); n * c * h * w];
                for plane in 0..n * c {
                    let src = &dy.data()[plane * ho * wo..(plane + 1) * ho * wo];
                    let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[y * w + xx] = src[(y / 2) * wo + xx / 2] * quarter;
                        }
                    }
                }
                accumulate(&mut grads[x.0], Tensor::new(vec![n, c, h, w], dx));
            }
            Op::Upsample2 { x } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let wo = w * 2;
                let mut dx = vec![T::zero(); n * c * h * w];
                for plane in 0..n * c {
                    let src = &dy.data()[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for y in 0..2 * h {
                        for xx in 0..wo {
                            dst[(y / 2) * w + xx / 2] += src[y * wo + xx];
                        }
                    }
                }
                accumulate(&mut grads[x.0], Tensor::new(vec![n, c, h, w], dx));
            }
            Op::ConcatChannels { a, b } => {
                let (n, ca, h, w) = self.value(*a).dims4();
                let cb = self.value(*b).dims4().1;
                let plane = h * w;
                if self.needs(*a) {
                    let mut da = Vec::with_capacity(n * ca * plane);
                    for i in 0..n {
                        let base = i * (ca + cb) * plane;
                        da.extend_from_slice(&dy.data()[base..base + ca * plane]);
                    }
                    accumulate(&mut grads[a.0], Tensor::new(vec![n, ca, h, w], da));
                }
                if self.needs(*b) {
                    let mut db = Vec::with_capacity(n * cb * plane);
                    for i in 0..n {
                        let base = i * (ca + cb) * plane + ca * plane;
                        db.extend_from_slice(&dy.data()[base..base + cb * plane]);
                    }
                    accumulate(&mut grads[b.0], Tensor::new(vec![n, cb, h, w], db));
                }
            }
            Op::GlobalAvgPool { x } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let inv = T::from_f64_lossy(1.0 / (h * w) as f64);
                let mut dx = Vec::with_capacity(n * c * h * w);
                for &g in dy.data() {
                    dx.extend(std::iter::repeat_n(g * inv, h * w));
                }
                accumulate(&mut grads[x.0], Tensor::new(vec![n, c, h, w], dx));
            }
            Op::Linear { x, w, b } => {
                let xs = self.value(*x).shape();
                let (n, d_in) = (xs[0], xs[1]);
                let d_out = self.value(*w).shape()[0];
                if self.needs(*w) {
                    // dW[out, in] = dyᵀ[out, N] · x[N, in]
                    let mut dw = vec![T::zero(); d_out * d_in];
                    T::gemm(d_out, n, d_in, T::one(), dy.data(), 1, d_out, self.value(*x).data(), d_in, 1, T::zero(), &mut dw, d_in, 1);
                    accumulate(&mut grads[w.0], Tensor::new(vec![d_out, d_in], dw));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); d_out];
                    for row in dy.data().chunks(d_out) {
                        for (acc, &g) in db.iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    accumulate(&mut grads[b.0], Tensor::new(vec![d_out], db));
                }
                if self.needs(*x) {
                    // dx[N, in] = dy[N, out] · w[out, in]
                    let mut dx = vec![T::zero(); n * d_in];
                    T::gemm(n, d_out, d_in, T::one(), dy.data(), d_out, 1, self.value(*w).data(), d_in, 1, T::zero(), &mut dx, d_in, 1);
                    accumulate(&mut grads[x.0], Tensor::new(vec![n, d_in], dx));
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], dy.clone());
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], dy.clone());
                }
            }
            Op::Scale { x, factor } => {
                let f = T::from_f64_lossy(*factor);
                accumulate(&mut grads[x.0], dy.map(|g| g * f));
            }
            Op::L1Mean { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let g = dy.item() * T::from_f64_lossy(1.0 / av.len().max(1) as f64);
                let sign: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&x, &y)| {
                        if x > y {
                            g
                        } else if x < y {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], Tensor::new(av.shape().to_vec(), sign.iter().map(|&v| -v).collect()));
                }
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], Tensor::new(av.shape().to_vec(), sign));
                }
            }
            Op::SigmoidNll { logits, target_real } => {
                let lv = self.value(*logits);
                let scale = dy.item().as_f64() / lv.len().max(1) as f64;
                let data = lv
                    .data()
                    .iter()
                    .map(|&z| {
                        let p = sigmoid(z.as_f64());
                        if p <= LOG_EPS || p >= 1.0 - LOG_EPS {
                            return T::zero();
                        }
                        let d = if *target_real { p - 1.0 } else { p };
                        T::from_f64_lossy(d * scale)
                    })
                    .collect();
                accumulate(&mut grads[logits.0], Tensor::new(lv.shape().to_vec(), data));
            }
            Op::CrossEntropy { logits, labels } => {
                let lv = self.value(*logits);
                let k = lv.shape()[1];
                let scale = dy.item().as_f64() / labels.len().max(1) as f64;
                let mut data = Vec::with_capacity(lv.len());
                for (row, &y) in lv.data().chunks(k).zip(labels) {
                    let p = softmax_f64(row);
                    if p[y] <= LOG_EPS {
                        data.extend(std::iter::repeat_n(T::zero(), k));
                        continue;
                    }
                    for (j, &pj) in p.iter().enumerate() {
                        let d = if j == y { pj - 1.0 } else { pj };
                        data.push(T::from_f64_lossy(d * scale));
                    }
                }
                accumulate(&mut grads[logits.0], Tensor::new(lv.shape().to_vec(), data));
            }
        }
    }
}

/// Numerically stable softmax of one logit row, evaluated in `f64`.
pub fn softmax_f64<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
