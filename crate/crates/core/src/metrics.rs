//! MAE, PSNR, and SSIM, plus the harness that scores a translator on aligned
//! paired test data.
//!
//! Images are compared in `[0, 1]` with unit peak. SSIM uses whole-image
//! statistics with population variances unless [`SsimMode::Windowed`] is
//! requested.

use fedmed_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{normalize, Slice2D, ValueRange};
use crate::networks::{slices_to_tensor, GeneratorParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self { c1: 0.01, c2: 0.03 }
    }
}

impl SsimConstants {
    /// `(0.01 L)²` and `(0.03 L)²` for peak `L = 1`.
    pub const CONVENTIONAL: SsimConstants = SsimConstants { c1: 1e-4, c2: 9e-4 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SsimMode {
    Global,
    /// Mean SSIM over all `size × size` windows at unit stride.
    Windowed { size: usize },
}

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("images differ in size: {} vs {} pixels", a.len(), b.len())));
    }
    Ok(())
}

pub fn mae_pixels(truth: &[f64], gen: &[f64]) -> Result<f64> {
    check(truth, gen)?;
    Ok(truth.iter().zip(gen).map(|(t, g)| (t - g).abs()).sum::<f64>() / truth.len() as f64)
}

pub fn mse_pixels(truth: &[f64], gen: &[f64]) -> Result<f64> {
    check(truth, gen)?;
    Ok(truth.iter().zip(gen).map(|(t, g)| (t - g) * (t - g)).sum::<f64>() / truth.len() as f64)
}

/// `-10 log10(MSE)`; `+∞` for identical images.
pub fn psnr_pixels(truth: &[f64], gen: &[f64]) -> Result<f64> {
    let mse = mse_pixels(truth, gen)?;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

pub fn ssim_pixels(truth: &[f64], gen: &[f64], c: SsimConstants) -> Result<f64> {
    check(truth, gen)?;
    let n = truth.len() as f64;
    let mt = truth.iter().sum::<f64>() / n;
    let mg = gen.iter().sum::<f64>() / n;
    let (mut vt, mut vg, mut cov) = (0.0, 0.0, 0.0);
    for (t, g) in truth.iter().zip(gen) {
        vt += (t - mt) * (t - mt);
        vg += (g - mg) * (g - mg);
        cov += (t - mt) * (g - mg);
    }
    let (vt, vg, cov) = (vt / n, vg / n, cov / n);
    Ok((2.0 * mt * mg + c.c1) * (2.0 * cov + c.c2) / ((mt * mt + mg * mg + c.c1) * (vt + vg + c.c2)))
}

fn same_shape(a: &Slice2D, b: &Slice2D) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!("images differ in shape: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mae(truth: &Slice2D, gen: &Slice2D) -> Result<f64> {
    same_shape(truth, gen)?;
    mae_pixels(truth.pixels(), gen.pixels())
}

pub fn psnr(truth: &Slice2D, gen: &Slice2D) -> Result<f64> {
    same_shape(truth, gen)?;
    psnr_pixels(truth.pixels(), gen.pixels())
}

pub fn ssim(truth: &Slice2D, gen: &Slice2D, c: SsimConstants) -> Result<f64> {
    same_shape(truth, gen)?;
    ssim_pixels(truth.pixels(), gen.pixels(), c)
}

pub fn ssim_with_mode(truth: &Slice2D, gen: &Slice2D, c: SsimConstants, mode: SsimMode) -> Result<f64> {
    match mode {
        SsimMode::Global => ssim(truth, gen, c),
        SsimMode::Windowed { size } => {
            same_shape(truth, gen)?;
            let (h, w) = truth.dims();
            if size == 0 || size > h || size > w {
                return Err(Error::invalid(format!("SSIM window {size} does not fit a {h}x{w} image")));
            }
            let mut total = 0.0;
            let mut count = 0usize;
            let mut bt = Vec::with_capacity(size * size);
            let mut bg = Vec::with_capacity(size * size);
            for y0 in 0..=h - size {
                for x0 in 0..=w - size {
                    bt.clear();
                    bg.clear();
                    for y in y0..y0 + size {
                        bt.extend_from_slice(&truth.pixels()[y * w + x0..y * w + x0 + size]);
                        bg.extend_from_slice(&gen.pixels()[y * w + x0..y * w + x0 + size]);
                    }
                    total += ssim_pixels(&bt, &bg, c)?;
                    count += 1;
                }
            }
            Ok(total / count as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub index: usize,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    /// Mean over images with finite PSNR; `+∞` when every image matched exactly.
    pub psnr: f64,
    pub ssim: f64,
    pub n_images: usize,
    /// Images excluded from the PSNR mean because they matched exactly.
    pub n_psnr_infinite: usize,
    pub per_image: Vec<ImageMetrics>,
}

impl MetricsReport {
    pub fn from_images(per_image: Vec<ImageMetrics>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::invalid("cannot summarise an empty test set"));
        }
        let n = per_image.len() as f64;
        let finite: Vec<f64> = per_image.iter().map(|m| m.psnr).filter(|p| p.is_finite()).collect();
        Ok(Self {
            mae: per_image.iter().map(|m| m.mae).sum::<f64>() / n,
            psnr: if finite.is_empty() { f64::INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 },
            ssim: per_image.iter().map(|m| m.ssim).sum::<f64>() / n,
            n_images: per_image.len(),
            n_psnr_infinite: per_image.len() - finite.len(),
            per_image,
        })
    }

    /// Strictly lower MAE and strictly higher PSNR and SSIM than `other`.
    pub fn beats(&self, other: &MetricsReport) -> bool {
        self.mae < other.mae && self.psnr > other.psnr && self.ssim > other.ssim
    }
}

/// Anything mapping modality-A slices to modality-B slices in the training range.
pub trait Translate {
    fn translate(&self, batch: &[&Slice2D]) -> Result<Vec<Slice2D>>;
}

impl Translate for GeneratorParams {
    fn translate(&self, batch: &[&Slice2D]) -> Result<Vec<Slice2D>> {
        let x: Tensor<f32> = slices_to_tensor(batch)?;
        crate::networks::tensor_to_slices(&self.forward(&x)?, ValueRange::TRAINING)
    }
}

/// Output equals input.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Translate for Identity {
    fn translate(&self, batch: &[&Slice2D]) -> Result<Vec<Slice2D>> {
        Ok(batch.iter().map(|s| (*s).clone()).collect())
    }
}

/// Pixel-wise intensity map, e.g. a known cross-modality relation.
pub struct Remap<F>(pub F);

impl<F: Fn(f64) -> f64> Translate for Remap<F> {
    fn translate(&self, batch: &[&Slice2D]) -> Result<Vec<Slice2D>> {
        batch
            .iter()
            .map(|s| {
                let px = s.pixels().iter().map(|&v| s.range().clamp((self.0)(v))).collect();
                Slice2D::new(s.height(), s.width(), px, s.range())
            })
            .collect()
    }
}

/// Scores `model` on aligned `(A, B)` pairs, comparing its output for `A` to
/// `B` after mapping both into `[0, 1]`.
pub fn evaluate(model: &dyn Translate, pairs: &[(Slice2D, Slice2D)], c: SsimConstants) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut per_image = Vec::with_capacity(pairs.len());
    for (chunk_i, chunk) in pairs.chunks(8).enumerate() {
        let inputs: Vec<&Slice2D> = chunk.iter().map(|(a, _)| a).collect();
        let outputs = model.translate(&inputs)?;
        for (j, ((_, truth), out)) in chunk.iter().zip(&outputs).enumerate() {
            let t = normalize(truth, truth.range(), ValueRange::METRIC)?;
            let g = normalize(out, out.range(), ValueRange::METRIC)?;
            per_image.push(ImageMetrics {
                index: chunk_i * 8 + j,
                mae: mae(&t, &g)?,
                psnr: psnr(&t, &g)?,
                ssim: ssim(&t, &g, c)?,
            });
        }
    }
    MetricsReport::from_images(per_image)
}
