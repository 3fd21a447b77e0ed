//! Periodic lattices, the graph Laplacian and the massive Green's function
//! `G = ((β - ½)(-Δ) + h)⁻¹` that sets the Brascamp–Lieb scales.

use horosim::lattice::laplacian;
use horosim::observables::{reference_green, reference_green_diagonal, weighted_laplacian_check};
use horosim::Lattice;

pub fn run_example() -> horosim::Result<()> {
    let lat = Lattice::new(2, &[4, 4])?;
    println!("{} sites, {} edges", lat.num_sites(), lat.edges().len());
    let neighbours: Vec<usize> = lat.neighbors(0).collect();
    println!("neighbours of the origin: {neighbours:?}");

    let lap = laplacian(&lat).to_dense();
    println!("Laplacian row sums vanish: {:e}", lap.row(0).sum().abs());

    let (beta, h) = (2.0, 1.0 / 16.0);
    let g = reference_green(&lat, beta, h)?;
    // Row sums of G are 1/h because the Laplacian annihilates constants.
    println!("G00 = {:.6}, row sum = {:.6}, 1/h = {}", g[(0, 0)], g.row(0).sum(), 1.0 / h);
    for side in [4, 6, 8] {
        let cube = Lattice::new(3, &[side; 3])?;
        let h = 1.0 / cube.num_sites() as f64;
        println!("d=3 L={side}: G00 = {:.5}", reference_green_diagonal(cube.shape(), beta, h)?);
    }

    let weighted = weighted_laplacian_check(&Lattice::new(3, &[6, 6, 6])?, 0.5)?;
    println!("site-weighted Laplacian, p = 0.5: G00 = {:.5}, hypothesis holds: {}", weighted.green_00, weighted.hypothesis_holds);
    Ok(())
}

#[allow(dead_code)]
fn main() -> horosim::Result<()> {
    run_example()
}
