//! Band random matrices with variance profile `J = (-W²Δ + 1)⁻¹`: entry
//! variances and the averaged resolvent.

use horosim::rmt::{resolvent_stats, sample_h, BandSpec, ProfileKind};
use horosim::Lattice;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> horosim::Result<()> {
    let lat = Lattice::new(1, &[8])?;
    let spec = BandSpec::new(&lat, 2, &ProfileKind::ExponentialW { w: 1.5 })?;
    println!("J(0, x) = {:?}", (0..4).map(|x| format!("{:.4}", spec.j[(0, x)])).collect::<Vec<_>>());

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let draws = 4_000;
    let mut second = 0.0;
    for _ in 0..draws {
        second += sample_h(&spec, &mut rng)[(0, 2)].norm_sqr();
    }
    println!("E|H(0,2)|² ≈ {:.4}, target {:.4}", second / draws as f64, spec.variance(0, 2));

    for energy in [0.0, 1.0, 2.0] {
        let stats = resolvent_stats(&spec, energy, 0.05, 0, 1, 400, &mut rng)?;
        println!(
            "E = {energy}: density {:.4} ± {:.4}, ⟨|G(0,1)|²⟩ = {:.3}, max ε‖G‖ = {:.3}",
            stats.density.mean, stats.density.std_error, stats.abs_sq.mean, stats.max_norm_times_epsilon
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> horosim::Result<()> {
    run_example()
}
