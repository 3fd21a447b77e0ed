//! Convexity certificate: `E″ - ((β - ½)(-Δ) + h)` stays positive
//! semidefinite for `β ≥ 3/2`, with the edge-moment and row-sum lemmas
//! checked on the way.

use horosim::hessian::{hessian_effective, CertificateRow};
use horosim::{Lattice, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn run_example() -> horosim::Result<()> {
    let lat = Lattice::new(2, &[4, 4])?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.7).expect("valid normal");
    println!("beta,{}", CertificateRow::CSV_HEADER);
    for beta in [0.5, 1.5, 3.0] {
        let params = ModelParams::delta(beta, 1.0 / 16.0)?;
        for index in 0..3 {
            let t: Vec<f64> = (0..lat.num_sites()).map(|_| noise.sample(&mut rng)).collect();
            let report = hessian_effective(&t, &params, &lat)?;
            println!("{beta},{}", CertificateRow::from_report(5, index, &report).to_csv());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> horosim::Result<()> {
    run_example()
}
