//! Proportion-weighted averaging of client generators.

use fedmed::federated::fedavg_aggregate;
use fedmed::networks::{Direction, GeneratorConfig, GeneratorParams};

fn main() -> fedmed::Result<()> {
    let cfg = GeneratorConfig::new(1, 2);
    let template = GeneratorParams::<f32>::zeros(cfg, Direction::AToB)?;
    let clients: Vec<_> = [1.0f32, 2.0, 3.0, 4.0]
        .iter()
        .map(|&v| template.with_vector(&vec![v; cfg.parameter_count()]))
        .collect::<fedmed::Result<_>>()?;
    let shares = [0.4, 0.3, 0.2, 0.1];
    let entries: Vec<_> = clients.iter().zip(shares).collect();
    let global = fedavg_aggregate(&entries)?;
    println!("{} parameters, first = {}", global.to_vector().len(), global.to_vector()[0]);
    Ok(())
}
