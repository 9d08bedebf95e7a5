//! Gradient clipping and Gaussian noise for differentially private updates.

use fedmed_autograd::Scalar;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DPConfig {
    /// L2 bound applied to each generator's batch gradient.
    pub clip_bound: f64,
    /// Recorded for reference; the noise scale does not use it.
    pub sensitivity: f64,
    pub noise_multiplier: f64,
    pub enabled: bool,
}

impl Default for DPConfig {
    fn default() -> Self {
        Self { clip_bound: 1.0, sensitivity: 2.0, noise_multiplier: 1.07, enabled: true }
    }
}

impl DPConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_bound.is_finite() && self.clip_bound > 0.0) {
            return Err(Error::invalid(format!("clip bound must be > 0, got {}", self.clip_bound)));
        }
        if !(self.noise_multiplier.is_finite() && self.noise_multiplier >= 0.0) {
            return Err(Error::invalid(format!("noise multiplier must be >= 0, got {}", self.noise_multiplier)));
        }
        Ok(())
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_multiplier * self.clip_bound
    }
}

pub fn l2_norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

/// `grad · min(1, bound / ‖grad‖₂)`. Gradients already within the bound are
/// returned untouched.
pub fn clip_gradient<T: Scalar>(grad: &[T], bound: f64) -> Vec<T> {
    let norm = l2_norm(grad);
    if norm <= bound {
        return grad.to_vec();
    }
    let f = bound / norm;
    let out: Vec<T> = grad.iter().map(|&g| T::from_f64_lossy(g.as_f64() * f)).collect();
    // rounding in the narrow type can leave the norm a hair above the bound
    let n2 = l2_norm(&out);
    if n2 > bound {
        let f = bound / n2 * (1.0 - 1e-6);
        return out.iter().map(|&g| T::from_f64_lossy(g.as_f64() * f)).collect();
    }
    out
}

/// Adds iid `N(0, (noise_multiplier · clip_bound)²)` noise to every coordinate.
pub fn add_dp_noise<T: Scalar>(grad: &[T], dp: &DPConfig, rng: &mut Rng) -> Vec<T> {
    let std = dp.noise_std();
    if std == 0.0 {
        return grad.to_vec();
    }
    grad.iter()
        .map(|&g| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(g.as_f64() + std * z)
        })
        .collect()
}

/// Clip then noise, or pass through when DP is off.
pub fn privatize<T: Scalar>(grad: &[T], dp: &DPConfig, rng: &mut Rng) -> Vec<T> {
    if !dp.enabled {
        return grad.to_vec();
    }
    add_dp_noise(&clip_gradient(grad, dp.clip_bound), dp, rng)
}
