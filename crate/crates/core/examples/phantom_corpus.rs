//! Generate a phantom corpus, write it as volume files and load it back.
//!
//! cargo run --example phantom_corpus -- /tmp/phantom

use std::path::PathBuf;

use fedmed::archive::{load_slice_corpus, write_corpus};
use fedmed::mud::{generate_phantom, PhantomSpec};

fn main() -> fedmed::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("fedmed-phantom"));
    let spec = PhantomSpec { n_volumes: 6, slices_per_volume: 4, image_size: 64, seed: 1, ..Default::default() };
    let corpus = generate_phantom(&spec)?;
    let files = write_corpus(&corpus, &root)?;
    println!("wrote {} files under {}", files.len(), root.display());

    let back = load_slice_corpus(&root, 50, 80, 48)?;
    for s in back.subjects() {
        let v = back.volume_a(&s).unwrap();
        println!("{s}: z {:?}, {}x{} after crop", v.z_range(), v.slices[0].height(), v.slices[0].width());
    }
    Ok(())
}
