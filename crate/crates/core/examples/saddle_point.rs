//! The determinant-deformed average `B¹` and the couplings `(β, h)` that the
//! mean-field saddle assigns to a band ensemble.

use horosim::rmt::{deformed_average_b1, saddle_params, BandSpec, ProfileKind};
use horosim::Lattice;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> horosim::Result<()> {
    let lat = Lattice::new(3, &[2, 2, 2])?;
    let (j0, j1) = (1.0, 0.25);
    let spec = BandSpec::new(&lat, 2, &ProfileKind::Cubes { side: 2, j0, j1 })?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for epsilon in [0.5, 1.0, 2.0] {
        let energy = 0.0;
        let s = saddle_params(spec.orbitals, j0, j1, energy, epsilon)?;
        let b1 = deformed_average_b1(&spec, energy, epsilon, 0, 2_000, &mut rng)?;
        println!(
            "ε = {epsilon}: ρ = {:.4}, β = {:.4}, h = {:.4}; B1 = {:.4} ± {:.4} (ess {:.2})",
            s.rho, s.beta, s.h, b1.estimate.mean, b1.estimate.std_error, b1.ess_fraction
        );
    }
    match saddle_params(1, 1.0, 0.5, 3.0, 0.1) {
        Err(e) => println!("outside the band: {e}"),
        Ok(s) => println!("unexpected: {s:?}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> horosim::Result<()> {
    run_example()
}
