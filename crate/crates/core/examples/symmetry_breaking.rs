//! `⟨(Tr σ₃ S₀)²⟩` at `h = 1/|Λ|` as the volume grows: flat in three
//! dimensions, growing in one.

use horosim::observables::{symmetry_breaking_study, write_study_csv, StudyConfig};
use horosim::sampler::ChainConfig;

pub fn run_example() -> horosim::Result<()> {
    let chain = ChainConfig {
        num_sweeps: 3_000,
        burn_in: 300,
        seed: 3,
        ..ChainConfig::default()
    };
    let mut out = Vec::new();
    for (dimension, sides) in [(1, vec![4, 8, 16]), (3, vec![3, 4])] {
        let rows = symmetry_breaking_study(&StudyConfig {
            dimension,
            sides,
            beta: 2.0,
            chain: chain.clone(),
            chains: 1,
        })?;
        write_study_csv(&rows, &mut out)?;
    }
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}

#[allow(dead_code)]
fn main() -> horosim::Result<()> {
    run_example()
}
