//! The variant x views x noise grid at toy scale, printed as CSV.

use fedmed::cli::{ablation_csv, run_ablation, ExperimentConfig, Overrides};
use fedmed::mud::generate_phantom;
use fedmed::networks::{DiscriminatorConfig, GeneratorConfig};

fn main() -> fedmed::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.phantom.n_volumes = 22;
    cfg.phantom.slices_per_volume = 2;
    cfg.phantom.image_size = 32;
    cfg.data.test_volumes = 2;
    cfg.train.rounds = 1;
    cfg.train.local_epochs = 1;
    cfg.train.generator = GeneratorConfig::new(1, 4);
    cfg.train.discriminator = DiscriminatorConfig { base_channels: 4, downsamples: 2 };
    let cfg = cfg.resolve(&Overrides { dp: Some(false), ..Default::default() })?;
    let corpus = generate_phantom(&cfg.phantom)?;
    print!("{}", ablation_csv(&cfg.experiment_name(), &run_ablation(&cfg, &corpus)?));
    Ok(())
}
