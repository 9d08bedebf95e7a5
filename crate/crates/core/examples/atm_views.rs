//! Labelled rotation / translation / scale views for the auxiliary heads.

use fedmed::atm::{atm_sample_views, SourceKind, TransformKind, CLASS_SETS};
use fedmed::mud::{generate_phantom, PhantomSpec};
use fedmed::seeding::rng_from;

fn main() -> fedmed::Result<()> {
    let corpus = generate_phantom(&PhantomSpec { n_volumes: 2, slices_per_volume: 1, seed: 2, ..Default::default() })?;
    let img = &corpus.modality_b[0].slices[0];
    let mut rng = rng_from(0);
    for k in [1, 2, 4] {
        let batch = atm_sample_views(img, k, SourceKind::Real, &mut rng)?;
        println!("k = {k}: {} views", batch.views.len());
        for kind in TransformKind::ALL {
            let labels: Vec<String> = batch
                .of_kind(kind)
                .map(|v| match kind {
                    TransformKind::Rotation => format!("{}deg", CLASS_SETS.rotations[v.label]),
                    TransformKind::Translation => format!("{:?}", CLASS_SETS.translations[v.label]),
                    TransformKind::Scale => format!("x{}", CLASS_SETS.scales[v.label]),
                })
                .collect();
            println!("  {kind:?}: {}", labels.join(" "));
        }
    }
    Ok(())
}
