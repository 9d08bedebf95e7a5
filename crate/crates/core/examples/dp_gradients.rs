//! Clip a gradient to the L2 bound, then add Gaussian noise.

use fedmed::federated::dp::{l2_norm, privatize};
use fedmed::federated::{clip_gradient, DPConfig};
use fedmed::seeding::rng_from;

fn main() {
    let grad: Vec<f32> = (0..10_000).map(|i| ((i * 37 % 101) as f32 - 50.0) / 10.0).collect();
    let dp = DPConfig::default();
    let clipped = clip_gradient(&grad, dp.clip_bound);
    println!("norm {:.2} -> {:.6} after clipping", l2_norm(&grad), l2_norm(&clipped));
    let noisy = privatize(&grad, &dp, &mut rng_from(0));
    let n = noisy.len() as f64;
    let diffs: Vec<f64> = noisy.iter().zip(&clipped).map(|(a, b)| (a - b) as f64).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    println!("noise mean {mean:.4}, std {std:.4} (target {:.2})", dp.noise_std());
    let off = privatize(&grad, &DPConfig::disabled(), &mut rng_from(0));
    println!("disabled leaves the gradient untouched: {}", off == grad);
}
