//! Misalignment noise: draw affine parameters at each level and warp a slice.

use fedmed::imaging::{apply_affine, Interp, InterpSpec};
use fedmed::metrics::{mae, ssim, SsimConstants};
use fedmed::mud::{generate_phantom, sample_affine, NoiseKind, NoiseLevel, PhantomSpec};
use fedmed::seeding::rng_from;

fn main() -> fedmed::Result<()> {
    let corpus = generate_phantom(&PhantomSpec { n_volumes: 2, slices_per_volume: 1, seed: 3, ..Default::default() })?;
    let img = &corpus.modality_a[0].slices[0];
    let mut rng = rng_from(7);
    for kind in [NoiseKind::None, NoiseKind::Slight, NoiseKind::Severe] {
        let level = NoiseLevel::from_kind(kind);
        for _ in 0..3 {
            let p = sample_affine(&level, &mut rng);
            let warped = apply_affine(img, &p, InterpSpec::background(Interp::Bilinear, img))?;
            println!(
                "{kind:>6}: rot {:7.2} deg  t ({:6.2}, {:6.2}) px  scale {:.3}  -> mae {:.4} ssim {:.4}",
                p.rotation_deg,
                p.translate_x,
                p.translate_y,
                p.scale_ratio,
                mae(img, &warped)?,
                ssim(img, &warped, SsimConstants::default())?
            );
        }
    }
    Ok(())
}
