//! Generator and discriminator shapes, parameter counts and a forward pass.

use fedmed::mud::{generate_phantom, PhantomSpec};
use fedmed::networks::{slices_to_tensor, DiscriminatorConfig, DiscriminatorParams, Direction, GeneratorConfig, GeneratorParams};

fn main() -> fedmed::Result<()> {
    for (name, g, d) in [
        ("desk", GeneratorConfig::default(), DiscriminatorConfig::default()),
        ("paper", GeneratorConfig::new(4, 32), DiscriminatorConfig { base_channels: 64, ..Default::default() }),
    ] {
        println!("{name}: generator {} params, discriminator {} params", g.parameter_count(), d.parameter_count());
    }
    let corpus = generate_phantom(&PhantomSpec { n_volumes: 2, slices_per_volume: 2, seed: 1, ..Default::default() })?;
    let x = slices_to_tensor::<f32>(&corpus.modality_a[0].slices.iter().collect::<Vec<_>>())?;
    let g = GeneratorParams::<f32>::init(GeneratorConfig::default(), Direction::AToB, 0)?;
    let d = DiscriminatorParams::<f32>::init(DiscriminatorConfig::default(), 1)?;
    let y = g.forward(&x)?;
    println!("generator {:?} -> {:?}", x.shape(), y.shape());
    for (i, h) in d.forward(&y)?.iter().enumerate() {
        println!(
            "sample {i}: realness {:.3}, rotation logits {:?}, scale logits {:?}",
            h.realness,
            h.rot_logits.map(|v| (v * 1000.0).round() / 1000.0),
            h.scale_logits.map(|v| (v * 1000.0).round() / 1000.0)
        );
    }
    Ok(())
}
