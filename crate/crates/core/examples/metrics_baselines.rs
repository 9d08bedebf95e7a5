//! MAE / PSNR / SSIM of reference translators on aligned phantom pairs.

use fedmed::metrics::{evaluate, Identity, Remap, SsimConstants};
use fedmed::mud::{generate_phantom, ModalityMap, PhantomSpec};

fn main() -> fedmed::Result<()> {
    let pairs = generate_phantom(&PhantomSpec { n_volumes: 3, seed: 4, ..Default::default() })?.aligned_pairs()?;
    let map = ModalityMap::default();
    let remap = Remap(move |v: f64| 2.0 * map.apply((v + 1.0) / 2.0) - 1.0);
    let inverted = Remap(|v: f64| -v);
    for (name, report) in [
        ("identity", evaluate(&Identity, &pairs, SsimConstants::default())?),
        ("true remap", evaluate(&remap, &pairs, SsimConstants::default())?),
        ("inverted", evaluate(&inverted, &pairs, SsimConstants::default())?),
    ] {
        println!("{name:>10}: mae {:.4}  psnr {:7.3}  ssim {:.4}  ({} images)", report.mae, report.psnr, report.ssim, report.n_images);
    }
    Ok(())
}
