//! Exponential-moment, tail and mean bounds for `t_0` from chain samples,
//! each reported as a `BoundCheck`.

use horosim::observables::brascamp_lieb_suite;
use horosim::sampler::{run_chain, ChainConfig, Observable};
use horosim::{Lattice, ModelParams};

pub fn run_example() -> horosim::Result<()> {
    let lat = Lattice::new(3, &[3, 3, 3])?;
    let params = ModelParams::delta(2.0, 1.0 / 27.0)?;
    let cfg = ChainConfig {
        num_sweeps: 5_000,
        burn_in: 500,
        seed: 9,
        keep_samples: true,
        ..ChainConfig::default()
    };
    let out = run_chain(&params, &lat, &cfg, &[Observable::WardSum])?;
    let checks = brascamp_lieb_suite(&out.samples, &params, &lat, &[0.5, 1.0, 2.0], &[1.0, 2.0])?;
    for c in checks {
        println!("{:<24} {:>10.5} <= {:>10.5}  ±{:.1e}  {}", c.name, c.lhs, c.rhs, c.mc_error, if c.passed { "ok" } else { "FAIL" });
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> horosim::Result<()> {
    run_example()
}
