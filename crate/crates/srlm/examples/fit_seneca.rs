//! Refits the cost constants to the dense reference block and prints them
//! as a cost config, followed by the sparse density profile implied by the
//! reference sparse column.
//!
//! ```text
//! cargo run --release -p srlm --example fit_seneca
//! ```

use srlm_core::hwcost::{self, reference, BlockShape, FitGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let shape = BlockShape::rwkv(reference::D_MODEL);
    let fit = hwcost::fit_reference(&shape, &reference::DENSE, hwcost::DEFAULT_OVERHEAD_FRACTION, FitGrid::default())?;
    let c = fit.config;
    println!("# max relative error {:.4}", fit.max_relative_error);
    println!("# natural CM_V density {}", fit.natural_density);
    println!("energy_compute = {:e}", c.energy_compute);
    println!("energy_memory = {:e}", c.energy_memory);
    println!("latency_compute = {:e}", c.latency_compute);
    println!("latency_memory = {:e}", c.latency_memory);
    println!("memory_factor = {}", c.memory_factor);
    println!("overhead_fraction = {}", c.overhead_fraction);
    println!("time_mix_overhead_share = {}", c.time_mix_overhead_share);
    if c != hwcost::CostConfig::SENECA_DEFAULT {
        eprintln!("note: differs from the compiled-in preset");
    }

    let sparse = hwcost::back_derived_profile(&shape, &reference::DENSE, &reference::SPARSE, fit.natural_density);
    println!();
    print!("{}", srlm::cost_io::density_toml(&sparse));
    Ok(())
}
