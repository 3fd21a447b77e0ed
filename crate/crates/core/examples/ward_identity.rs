//! A Markov chain on the effective `t` law and the Ward identity
//! `h Σ_j ⟨sinh t_j⟩ = 1`.

use horosim::sampler::{merged_estimate, run_chains, ChainConfig, Observable};
use horosim::{Lattice, ModelParams};

pub fn run_example() -> horosim::Result<()> {
    let lat = Lattice::new(2, &[4, 4])?;
    let params = ModelParams::delta(2.0, 1.0 / 16.0)?;
    let cfg = ChainConfig {
        num_sweeps: 6_000,
        burn_in: 500,
        seed: 2024,
        ..ChainConfig::default()
    };
    let observables = [Observable::WardSum, Observable::MeanT, Observable::Theorem1];
    let chains = run_chains(&params, &lat, &cfg, &observables, 2)?;
    for o in observables {
        let est = merged_estimate(&chains, o).expect("recorded");
        println!("{:>10}: {:.4} ± {:.4} (n_eff {:.0})", o.name(), est.mean, est.std_error, est.n_effective);
    }
    let d = &chains[0].diagnostics;
    println!("acceptance: local {:.2}, global {:.2}", d.local_acceptance, d.global_acceptance);

    let mut head = Vec::new();
    chains[0].write_trace_csv(&mut head)?;
    let text = String::from_utf8_lossy(&head);
    for line in text.lines().take(3) {
        println!("{line}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> horosim::Result<()> {
    run_example()
}
