//! `φ ↦ φ*φ` pushes the flat measure on `N × n` complex matrices to
//! `Det^{N-n}(M) dM` up to a constant; the ratio table shows the constant.

use horosim::rmt::{pushforward_check, TestFunction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> horosim::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let functions = [TestFunction::new(0, 0, 1.0), TestFunction::new(1, 0, 2.0), TestFunction::new(2, 1, 1.5)];
    for (n, big_n) in [(1, 1), (1, 3), (2, 2)] {
        let report = pushforward_check(n, big_n, &functions, 20_000, &mut rng)?;
        println!("n = {n}, N = {big_n}: largest pairwise z = {:.2}", report.max_pairwise_z);
        for row in &report.rows {
            println!("  {:<22} ratio {:.4} ± {:.4}", row.function, row.ratio.mean, row.ratio.std_error);
        }
    }
    println!("π = {:.4}", std::f64::consts::PI);
    Ok(())
}

#[allow(dead_code)]
fn main() -> horosim::Result<()> {
    run_example()
}
