//! Four hospitals with misaligned unpaired data: who holds what.

use fedmed::archive::manifest_csv;
use fedmed::mud::{build_clients, generate_phantom, paper_scenario, NoiseKind, PhantomSpec};
use fedmed::seeding::stream;

fn main() -> fedmed::Result<()> {
    let corpus = generate_phantom(&PhantomSpec { n_volumes: 20, slices_per_volume: 2, image_size: 32, seed: 5, ..Default::default() })?;
    let clients = build_clients(&corpus, &paper_scenario(NoiseKind::Severe), &mut stream(5, &["mud"]))?;
    for c in &clients {
        let paired = c.pairs.iter().filter(|p| p.paired).count();
        println!(
            "client {}: share {:.2}, {} volumes {:?}, {} samples ({paired} paired)",
            c.client_id,
            c.proportion,
            c.subjects.len(),
            c.subjects,
            c.len()
        );
    }
    let rows: Vec<_> = clients.iter().flat_map(|c| c.pairs.iter().map(move |p| (c.client_id, p))).take(4).collect();
    print!("{}", manifest_csv(&rows));
    Ok(())
}
