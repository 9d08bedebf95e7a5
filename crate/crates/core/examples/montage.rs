//! Input / generated / target grid for a few test slices, written as PNG.

use fedmed::cli::write_montage;
use fedmed::metrics::Remap;
use fedmed::mud::{generate_phantom, ModalityMap, PhantomSpec};

fn main() -> fedmed::Result<()> {
    let pairs = generate_phantom(&PhantomSpec { n_volumes: 2, seed: 9, ..Default::default() })?.aligned_pairs()?;
    let map = ModalityMap::Gamma { gamma: 0.7 };
    let model = Remap(move |v: f64| 2.0 * map.apply((v + 1.0) / 2.0) - 1.0);
    let path = std::env::temp_dir().join("fedmed-montage.png");
    let n = write_montage(&model, &pairs, 3, 0, &path)?;
    println!("{n} rows -> {}", path.display());
    Ok(())
}
