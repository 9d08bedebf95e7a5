//! Training objectives evaluated on plain values.
//!
//! The graph versions used for backpropagation live in the trainer and are
//! checked against these.

use fedmed_autograd::{softmax_f64, LOG_EPS};
use serde::{Deserialize, Serialize};

use crate::atm::{SourceKind, ViewBatch};
use crate::error::{Error, Result};
use crate::imaging::Slice2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub adv: f64,
    pub cyc: f64,
    pub rot: f64,
    pub trans: f64,
    pub scale: f64,
}

impl LossWeights {
    pub const GENERATOR: LossWeights = LossWeights { adv: 1.0, cyc: 10.0, rot: 1.0, trans: 1.0, scale: 1.0 };
    pub const DISCRIMINATOR: LossWeights = LossWeights { adv: 1.0, cyc: 0.0, rot: 0.5, trans: 0.5, scale: 0.5 };

    pub fn validate(&self) -> Result<()> {
        let all = [self.adv, self.cyc, self.rot, self.trans, self.scale];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(format!("loss weights must be finite and >= 0, got {self:?}")));
        }
        Ok(())
    }

    pub fn uses_atm(&self) -> bool {
        self.rot > 0.0 || self.trans > 0.0 || self.scale > 0.0
    }
}

/// Unweighted loss terms of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv: f64,
    pub cyc: f64,
    pub rot: f64,
    pub trans: f64,
    pub scale: f64,
}

impl LossComponents {
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [("adv", self.adv), ("cyc", self.cyc), ("rot", self.rot), ("trans", self.trans), ("scale", self.scale)]
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, v)| v.is_finite())
    }
}

fn ln_clamped(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS).ln()
}

/// `λ ·` mean negative log-softmax probability of the true class.
pub fn classification_loss(logits: &[&[f64]], labels: &[usize], classes: usize, lambda: f64) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::invalid(format!("{} logit rows for {} labels", logits.len(), labels.len())));
    }
    let mut s = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        if row.len() != classes {
            return Err(Error::invalid(format!("logit row has {} entries, expected {classes}", row.len())));
        }
        if y >= classes {
            return Err(Error::invalid(format!("label {y} out of range for {classes} classes")));
        }
        s -= softmax_f64(row)[y].max(LOG_EPS).ln();
    }
    Ok(lambda * s / labels.len() as f64)
}

pub fn aux_rotation_loss(logits: &[[f64; 4]], labels: &[usize], lambda: f64) -> Result<f64> {
    let rows: Vec<&[f64]> = logits.iter().map(|r| &r[..]).collect();
    classification_loss(&rows, labels, 4, lambda)
}

pub fn aux_translation_loss(logits: &[[f64; 4]], labels: &[usize], lambda: f64) -> Result<f64> {
    let rows: Vec<&[f64]> = logits.iter().map(|r| &r[..]).collect();
    classification_loss(&rows, labels, 4, lambda)
}

pub fn aux_scaling_loss(logits: &[[f64; 3]], labels: &[usize], lambda: f64) -> Result<f64> {
    let rows: Vec<&[f64]> = logits.iter().map(|r| &r[..]).collect();
    classification_loss(&rows, labels, 3, lambda)
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len().max(1) as f64;
    v.sum::<f64>() / n
}

/// `-mean log D(real) - mean log(1 - D(fake))`.
pub fn adversarial_loss_d(realness_real: &[f64], realness_fake: &[f64]) -> f64 {
    -mean(realness_real.iter().map(|&p| ln_clamped(p))) - mean(realness_fake.iter().map(|&p| ln_clamped(1.0 - p)))
}

/// Non-saturating generator term `-mean log D(fake)`.
pub fn adversarial_loss_g(realness_fake: &[f64]) -> f64 {
    -mean(realness_fake.iter().map(|&p| ln_clamped(p)))
}

fn mean_l1(a: &[Slice2D], b: &[Slice2D]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("cycle batches of {} and {} images", a.len(), b.len())));
    }
    let mut s = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        if x.dims() != y.dims() {
            return Err(Error::invalid(format!("cycle images differ in shape: {:?} vs {:?}", x.dims(), y.dims())));
        }
        s += x.pixels().iter().zip(y.pixels()).map(|(p, q)| (p - q).abs()).sum::<f64>();
        n += x.pixels().len();
    }
    Ok(s / n as f64)
}

/// `λ · (mean |F(G(x)) - x| + mean |G(F(y)) - y|)`, per-pixel means.
pub fn cycle_loss(x: &[Slice2D], x_cycled: &[Slice2D], y: &[Slice2D], y_cycled: &[Slice2D], lambda: f64) -> Result<f64> {
    Ok(lambda * (mean_l1(x_cycled, x)? + mean_l1(y_cycled, y)?))
}

pub fn total_generator_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.adv * c.adv + w.cyc * c.cyc + w.rot * c.rot + w.trans * c.trans + w.scale * c.scale
}

/// The discriminator has no cycle term; `w.cyc` is ignored.
pub fn total_discriminator_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.adv * c.adv + w.rot * c.rot + w.trans * c.trans + w.scale * c.scale
}

/// Generator updates may only see views cut from real samples.
pub fn check_generator_views(batches: &[&ViewBatch]) -> Result<()> {
    if let Some(b) = batches.iter().find(|b| b.source != SourceKind::Real) {
        return Err(Error::InvalidState(format!("generator update received {:?} views", b.source)));
    }
    Ok(())
}

/// Discriminator updates need views from both real and fake samples.
pub fn check_discriminator_views(batches: &[&ViewBatch]) -> Result<()> {
    for want in [SourceKind::Real, SourceKind::Fake] {
        if !batches.iter().any(|b| b.source == want) {
            return Err(Error::InvalidState(format!("discriminator update has no {want:?} views")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ValueRange;

    #[test]
    fn perfect_and_uniform_predictions() {
        assert!(aux_rotation_loss(&[[50.0, 0.0, 0.0, 0.0]], &[0], 1.0).unwrap() < 1e-12);
        let u = aux_translation_loss(&[[0.0; 4], [0.0; 4]], &[1, 3], 2.0).unwrap();
        assert!((u - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert_eq!(aux_translation_loss(&[[3.0, 1.0, 0.0, 2.0]], &[1], 0.0).unwrap(), 0.0);
        assert!(aux_scaling_loss(&[[0.0; 3]], &[3], 1.0).is_err());
        assert!(aux_scaling_loss(&[[0.0; 3]], &[0, 1], 1.0).is_err());
    }

    #[test]
    fn saturated_discriminator_stays_finite() {
        let l = adversarial_loss_d(&[1.0], &[1.0]);
        assert!(l.is_finite() && l > 10.0);
        assert!(adversarial_loss_g(&[0.0]).is_finite());
    }

    #[test]
    fn cycle_rejects_shape_mismatch() {
        let a = Slice2D::filled(8, 8, 0.0, ValueRange::TRAINING).unwrap();
        let b = Slice2D::filled(8, 16, 0.0, ValueRange::TRAINING).unwrap();
        assert!(cycle_loss(std::slice::from_ref(&a), &[b], std::slice::from_ref(&a), std::slice::from_ref(&a), 1.0).is_err());
    }

    #[test]
    fn negative_weight_is_rejected() {
        assert!(LossWeights { rot: -1.0, ..LossWeights::GENERATOR }.validate().is_err());
        assert!(LossWeights::GENERATOR.validate().is_ok());
    }
}
