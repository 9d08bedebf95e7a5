//! Federated CycleGAN training with auxiliary heads on a small phantom.
//! Prints per-round losses and test metrics against the identity baseline.
//!
//! ROUNDS=3 cargo run --release --example federated_training

use fedmed::federated::{run_training, DPConfig, LossRecord, Role, TrainConfig};
use fedmed::metrics::{evaluate, Identity, SsimConstants};
use fedmed::mud::{build_clients, generate_phantom, paper_scenario, NoiseKind, PhantomSpec};
use fedmed::networks::{DiscriminatorConfig, GeneratorConfig};
use fedmed::seeding::stream;

fn mean(records: &[&LossRecord], f: impl Fn(&LossRecord) -> f64) -> f64 {
    records.iter().map(|r| f(r)).sum::<f64>() / records.len().max(1) as f64
}

fn main() -> fedmed::Result<()> {
    env_logger::init();
    let rounds = std::env::var("ROUNDS").ok().and_then(|v| v.parse().ok()).unwrap_or(2);
    let dp = if std::env::var("DP").is_ok_and(|v| v != "0") { DPConfig::default() } else { DPConfig::disabled() };
    let spec = PhantomSpec { n_volumes: 20, slices_per_volume: 4, image_size: 32, seed: 1, ..Default::default() };
    let corpus = generate_phantom(&spec)?;
    let test = generate_phantom(&PhantomSpec { n_volumes: 3, seed: 2, ..spec })?.aligned_pairs()?;
    let clients = build_clients(&corpus, &paper_scenario(NoiseKind::Severe), &mut stream(1, &["mud"]))?;
    let cfg = TrainConfig {
        rounds,
        local_epochs: 2,
        generator: GeneratorConfig::new(2, 8),
        discriminator: DiscriminatorConfig { base_channels: 8, downsamples: 3 },
        seed: 1,
        ..TrainConfig::default()
    };
    let identity = evaluate(&Identity, &test, SsimConstants::default())?;
    println!("identity: mae {:.4} psnr {:.2} ssim {:.4}", identity.mae, identity.psnr, identity.ssim);
    run_training(&cfg, &dp, clients, |server, _, records| {
        let gen: Vec<_> = records.iter().filter(|r| r.role == Role::Gen).collect();
        let disc: Vec<_> = records.iter().filter(|r| r.role == Role::Disc).collect();
        let m = evaluate(&server.gen_ab, &test, SsimConstants::default())?;
        println!(
            "round {}: G adv {:.3} cyc {:.4} | D adv {:.3} rot {:.3} | mae {:.4} psnr {:.2} ssim {:.4}",
            server.round_index,
            mean(&gen, |r| r.components.adv),
            mean(&gen, |r| r.components.cyc),
            mean(&disc, |r| r.components.adv),
            mean(&disc, |r| r.components.rot),
            m.mae,
            m.psnr,
            m.ssim
        );
        Ok(())
    })?;
    Ok(())
}
