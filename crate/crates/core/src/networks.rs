//! Generator and discriminator definitions.
//!
//! # Generator
//!
//! U-Net with `depth` levels and `base` channels; level `i` has
//! `c_i = base · 2^i` channels. Every 3×3 convolution uses padding 1 and is
//! followed by LeakyReLU(0.2).
//!
//! ```text
//! enc_i:      conv3x3(c_{i-1} -> c_i), then 2x2 average pool   (c_{-1} = 1)
//! bottleneck: conv3x3(c_{d-1} -> c_d)
//! dec_i:      nearest 2x upsample, concat skip_i, conv3x3(c_{i+1} + c_i -> c_i)
//! out:        conv1x1(c_0 -> 1), tanh
//! ```

//!
//! Inputs must have sides divisible by `2^depth`.
//!
//! # Discriminator
//!
//! A shared encoder of `downsamples` stride-2 3×3 convolutions
//! (`base · 2^i` channels), a 1×1 projection to 512 channels, and global
//! average pooling, so the feature vector is 512-wide for any input size.
//! Four two-layer heads read the features: realness `512 -> 128 -> 1` and the
//! rotation, translation, and scale classifiers `512 -> 128 -> {4, 4, 3}`.
//!
//! # Initialisation
//!
//! Weights are drawn from `N(0, 2 / ((1 + 0.2²) · fan_in))`, biases start at
//! zero. Parameters flatten in layout order, weights before biases.

use fedmed_autograd::{Gradients, Graph, Scalar, Tensor, Var};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Slice2D, ValueRange};
use crate::seeding;

pub const FEATURE_DIM: usize = 512;
pub const HEAD_HIDDEN: usize = 128;
pub const ROTATION_CLASSES: usize = 4;
pub const TRANSLATION_CLASSES: usize = 4;
pub const SCALE_CLASSES: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { depth: 3, base_channels: 16 }
    }
}

impl GeneratorConfig {
    pub fn new(depth: usize, base_channels: usize) -> Self {
        Self { depth, base_channels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(Error::invalid(format!(
                "generator needs depth >= 1 and base channels >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// `(name, shape)` of every parameter tensor in flattening order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv = |name: String, c_out: usize, c_in: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![c_out, c_in, k, k]));
            out.push((format!("{name}.bias"), vec![c_out]));
        };
        for i in 0..self.depth {
            let c_in = if i == 0 { 1 } else { self.channels(i - 1) };
            conv(format!("enc{i}"), self.channels(i), c_in, 3);
        }
        conv("bottleneck".into(), self.channels(self.depth), self.channels(self.depth - 1), 3);
        for i in (0..self.depth).rev() {
            conv(format!("dec{i}"), self.channels(i), self.channels(i + 1) + self.channels(i), 3);
        }
        conv("out".into(), 1, self.channels(0), 1);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub downsamples: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 16, downsamples: 4 }
    }
}

/// The four heads sharing the discriminator encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    Realness,
    Rotation,
    Translation,
    Scale,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::Realness, Head::Rotation, Head::Translation, Head::Scale];

    pub fn outputs(self) -> usize {
        match self {
            Head::Realness => 1,
            Head::Rotation => ROTATION_CLASSES,
            Head::Translation => TRANSLATION_CLASSES,
            Head::Scale => SCALE_CLASSES,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Head::Realness => "head_d",
            Head::Rotation => "head_r",
            Head::Translation => "head_t",
            Head::Scale => "head_s",
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.downsamples == 0 {
            return Err(Error::invalid(format!(
                "discriminator needs base channels >= 1 and downsamples >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for i in 0..self.downsamples {
            let c_in = if i == 0 { 1 } else { self.base_channels << (i - 1) };
            out.push((format!("enc{i}.weight"), vec![self.base_channels << i, c_in, 3, 3]));
            out.push((format!("enc{i}.bias"), vec![self.base_channels << i]));
        }
        let last = self.base_channels << (self.downsamples - 1);
        out.push(("proj.weight".into(), vec![FEATURE_DIM, last, 1, 1]));
        out.push(("proj.bias".into(), vec![FEATURE_DIM]));
        for head in Head::ALL {
            let p = head.prefix();
            out.push((format!("{p}.fc1.weight"), vec![HEAD_HIDDEN, FEATURE_DIM]));
            out.push((format!("{p}.fc1.bias"), vec![HEAD_HIDDEN]));
            out.push((format!("{p}.fc2.weight"), vec![head.outputs(), HEAD_HIDDEN]));
            out.push((format!("{p}.fc2.bias"), vec![head.outputs()]));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    fn head_offset(&self, head: Head) -> usize {
        2 * self.downsamples + 2 + 4 * Head::ALL.iter().position(|h| *h == head).unwrap()
    }
}

/// Ordered list of parameter tensors matching a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    fn init(layout: &[(String, Vec<usize>)], seed: u64) -> Self {
        let mut rng = seeding::rng_from(seed);
        let tensors = layout
            .iter()
            .map(|(name, shape)| {
                if name.ends_with(".bias") {
                    return Tensor::zeros(shape.clone());
                }
                let fan_in: usize = shape[1..].iter().product();
                let std = (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64)).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let n = shape.iter().product();
                let data = (0..n).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect();
                Tensor::new(shape.clone(), data)
            })
            .collect();
        Self { tensors }
    }

    fn zeros(layout: &[(String, Vec<usize>)]) -> Self {
        Self { tensors: layout.iter().map(|(_, s)| Tensor::zeros(s.clone())).collect() }
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vector(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.len());
        for t in &self.tensors {
            v.extend_from_slice(t.data());
        }
        v
    }

    pub fn with_vector(&self, v: &[T]) -> Result<Self> {
        if v.len() != self.len() {
            return Err(Error::invalid(format!(
                "parameter vector has {} values, template expects {}",
                v.len(),
                self.len()
            )));
        }
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let n = t.len();
                let out = Tensor::new(t.shape().to_vec(), v[offset..offset + n].to_vec());
                offset += n;
                out
            })
            .collect();
        Ok(Self { tensors })
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Registers every tensor on `graph`, trainable or frozen.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { graph.param(t.clone()) } else { graph.constant(t.clone()) })
            .collect();
        Bound { vars }
    }

    /// Flattened gradient of the bound tensors, zeros where nothing flowed.
    pub fn gradient(&self, grads: &Gradients<T>, bound: &Bound) -> Vec<T> {
        let mut v = Vec::with_capacity(self.len());
        for (t, var) in self.tensors.iter().zip(&bound.vars) {
            match grads.get(*var) {
                Some(g) => v.extend_from_slice(g.data()),
                None => v.extend(std::iter::repeat_n(T::zero(), t.len())),
            }
        }
        v
    }
}

/// Graph handles of a bound [`ParamSet`], in layout order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Modality A to modality B (`G`).
    AToB,
    /// Modality B to modality A (`F`).
    BToA,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams<T = f32> {
    pub config: GeneratorConfig,
    pub direction: Direction,
    pub params: ParamSet<T>,
}

impl<T: Scalar> GeneratorParams<T> {
    pub fn init(config: GeneratorConfig, direction: Direction, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, direction, params: ParamSet::init(&config.layout(), seed) })
    }

    pub fn zeros(config: GeneratorConfig, direction: Direction) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, direction, params: ParamSet::zeros(&config.layout()) })
    }

    pub fn to_vector(&self) -> Vec<T> {
        self.params.to_vector()
    }

    pub fn with_vector(&self, v: &[T]) -> Result<Self> {
        Ok(Self { params: self.params.with_vector(v)?, ..self.clone() })
    }

    pub fn cast<U: Scalar>(&self) -> GeneratorParams<U> {
        GeneratorParams { config: self.config, direction: self.direction, params: self.params.cast() }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let m = 1usize << self.config.depth;
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::invalid(format!("generator expects [N, 1, H, W] input, got {shape:?}")));
        }
        if !shape[2].is_multiple_of(m) || !shape[3].is_multiple_of(m) {
            return Err(Error::invalid(format!(
                "generator of depth {} needs height and width divisible by {m}, got {}x{}",
                self.config.depth, shape[2], shape[3]
            )));
        }
        Ok(())
    }

    /// Builds the forward pass on `graph`. `x` must have passed [`check_input`](Self::check_input).
    pub fn forward_graph(&self, graph: &mut Graph<T>, bound: &Bound, x: Var) -> Var {
        let v = &bound.vars;
        let d = self.config.depth;
        let mut h = x;
        let mut skips = Vec::with_capacity(d);
        for i in 0..d {
            let c = graph.conv2d(h, v[2 * i], v[2 * i + 1], 1, 1);
            let a = graph.leaky_relu(c, LEAKY_SLOPE);
            skips.push(a);
            h = graph.avg_pool2(a);
        }
        let c = graph.conv2d(h, v[2 * d], v[2 * d + 1], 1, 1);
        h = graph.leaky_relu(c, LEAKY_SLOPE);
        for (j, i) in (0..d).rev().enumerate() {
            let base = 2 * (d + 1 + j);
            let up = graph.upsample2(h);
            let cat = graph.concat_channels(up, skips[i]);
            let c = graph.conv2d(cat, v[base], v[base + 1], 1, 1);
            h = graph.leaky_relu(c, LEAKY_SLOPE);
        }
        let base = 2 * (2 * d + 1);
        let o = graph.conv2d(h, v[base], v[base + 1], 1, 0);
        graph.tanh(o)
    }

    /// Inference on an NCHW batch.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward_graph(&mut g, &bound, xv);
        Ok(g.value(y).clone())
    }
}

/// Per-image outputs of the four heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    /// Sigmoid of the realness head, clamped into `(0, 1)`.
    pub realness: f64,
    pub rot_logits: [f64; ROTATION_CLASSES],
    pub trans_logits: [f64; TRANSLATION_CLASSES],
    pub scale_logits: [f64; SCALE_CLASSES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams<T = f32> {
    pub config: DiscriminatorConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> DiscriminatorParams<T> {
    pub fn init(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, params: ParamSet::init(&config.layout(), seed) })
    }

    pub fn zeros(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, params: ParamSet::zeros(&config.layout()) })
    }

    pub fn to_vector(&self) -> Vec<T> {
        self.params.to_vector()
    }

    pub fn with_vector(&self, v: &[T]) -> Result<Self> {
        Ok(Self { params: self.params.with_vector(v)?, ..self.clone() })
    }

    pub fn cast<U: Scalar>(&self) -> DiscriminatorParams<U> {
        DiscriminatorParams { config: self.config, params: self.params.cast() }
    }

    /// Shared encoder: `[N, 1, H, W] -> [N, 512]`.
    pub fn encoder_graph(&self, graph: &mut Graph<T>, bound: &Bound, x: Var) -> Var {
        let v = &bound.vars;
        let mut h = x;
        for i in 0..self.config.downsamples {
            let c = graph.conv2d(h, v[2 * i], v[2 * i + 1], 2, 1);
            h = graph.leaky_relu(c, LEAKY_SLOPE);
        }
        let l = 2 * self.config.downsamples;
        let p = graph.conv2d(h, v[l], v[l + 1], 1, 0);
        let p = graph.leaky_relu(p, LEAKY_SLOPE);
        graph.global_avg_pool(p)
    }

    /// Raw output of one head: the realness logit or class logits.
    pub fn head_graph(&self, graph: &mut Graph<T>, bound: &Bound, features: Var, head: Head) -> Var {
        let o = self.config.head_offset(head);
        let v = &bound.vars;
        let h = graph.linear(features, v[o], v[o + 1]);
        let h = graph.leaky_relu(h, LEAKY_SLOPE);
        graph.linear(h, v[o + 2], v[o + 3])
    }

    fn check_input(shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != 1 || shape[0] == 0 {
            return Err(Error::invalid(format!("discriminator expects [N, 1, H, W] input, got {shape:?}")));
        }
        Ok(())
    }

    pub fn encoder_forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Self::check_input(x.shape())?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let f = self.encoder_graph(&mut g, &bound, xv);
        Ok(g.value(f).clone())
    }

    pub fn heads_forward(&self, features: &Tensor<T>) -> Result<Vec<HeadOutputs>> {
        let s = features.shape();
        if s.len() != 2 || s[1] != FEATURE_DIM {
            return Err(Error::invalid(format!("head input must be [N, {FEATURE_DIM}], got {s:?}")));
        }
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let f = g.constant(features.clone());
        let vars: Vec<Var> = Head::ALL.iter().map(|&h| self.head_graph(&mut g, &bound, f, h)).collect();
        let outs: Vec<Tensor<T>> = vars.into_iter().map(|v| g.value(v).clone()).collect();
        let row = |t: &Tensor<T>, i: usize, k: usize| -> Vec<f64> { t.data()[i * k..(i + 1) * k].iter().map(|v| v.as_f64()).collect() };
        Ok((0..s[0])
            .map(|i| HeadOutputs {
                realness: realness(outs[0].data()[i].as_f64()),
                rot_logits: row(&outs[1], i, ROTATION_CLASSES).try_into().unwrap(),
                trans_logits: row(&outs[2], i, TRANSLATION_CLASSES).try_into().unwrap(),
                scale_logits: row(&outs[3], i, SCALE_CLASSES).try_into().unwrap(),
            })
            .collect())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Vec<HeadOutputs>> {
        self.heads_forward(&self.encoder_forward(x)?)
    }
}

/// Sigmoid clamped to `[LOG_EPS, 1 - LOG_EPS]`.
pub fn realness(logit: f64) -> f64 {
    let p = if logit >= 0.0 { 1.0 / (1.0 + (-logit).exp()) } else { logit.exp() / (1.0 + logit.exp()) };
    p.clamp(fedmed_autograd::LOG_EPS, 1.0 - fedmed_autograd::LOG_EPS)
}

/// Stacks same-sized slices into an `[N, 1, H, W]` batch.
pub fn slices_to_tensor<T: Scalar>(slices: &[&Slice2D]) -> Result<Tensor<T>> {
    let first = slices.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(slices.len() * h * w);
    for s in slices {
        if s.dims() != (h, w) {
            return Err(Error::invalid(format!("batch mixes {h}x{w} and {}x{} images", s.height(), s.width())));
        }
        data.extend(s.pixels().iter().map(|&v| T::from_f64_lossy(v)));
    }
    Ok(Tensor::new(vec![slices.len(), 1, h, w], data))
}

/// Splits an `[N, 1, H, W]` batch into slices declaring `range`; values are clamped into it.
pub fn tensor_to_slices<T: Scalar>(t: &Tensor<T>, range: ValueRange) -> Result<Vec<Slice2D>> {
    let (n, c, h, w) = t.dims4();
    if c != 1 {
        return Err(Error::invalid(format!("expected single-channel batch, got {c} channels")));
    }
    (0..n)
        .map(|i| {
            let px = t.data()[i * h * w..(i + 1) * h * w].iter().map(|v| range.clamp(v.as_f64())).collect();
            Slice2D::new(h, w, px, range)
        })
        .collect()
}
