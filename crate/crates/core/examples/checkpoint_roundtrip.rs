//! Save global generators and client discriminators, then restore them.

use fedmed::checkpoint::Checkpoint;
use fedmed::federated::{ClientState, ServerState, TrainConfig};
use fedmed::mud::{build_clients, generate_phantom, paper_scenario, NoiseKind, PhantomSpec};
use fedmed::networks::{DiscriminatorConfig, GeneratorConfig};
use fedmed::seeding::rng_from;

fn main() -> fedmed::Result<()> {
    let cfg = TrainConfig {
        generator: GeneratorConfig::new(1, 4),
        discriminator: DiscriminatorConfig { base_channels: 4, downsamples: 2 },
        ..TrainConfig::default()
    };
    let corpus = generate_phantom(&PhantomSpec { n_volumes: 20, slices_per_volume: 1, image_size: 16, ..Default::default() })?;
    let server = ServerState::new(&cfg)?;
    let clients = build_clients(&corpus, &paper_scenario(NoiseKind::Slight), &mut rng_from(0))?
        .into_iter()
        .map(|d| ClientState::new(d, &server, &cfg))
        .collect::<fedmed::Result<Vec<_>>>()?;
    let ckpt = Checkpoint::from_state(&server, &clients, 0, "example", cfg.discriminator);
    let path = std::env::temp_dir().join("fedmed-example.ckpt");
    ckpt.save(&path)?;
    let back = Checkpoint::load(&path)?;
    for (name, values) in &back.sections {
        println!("{name}: {} floats", values.len());
    }
    let (g_ab, _) = back.generators()?;
    println!("restored generator matches: {}", g_ab.to_vector() == server.gen_ab.to_vector());
    Ok(())
}
