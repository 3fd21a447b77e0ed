//! The action in matrix and horospherical form, and the effective action of
//! `t` after the Gaussian `s` integral.

use horosim::model::{action_horo, action_matrix, effective_action, grad_effective_action, horo_to_matrix};
use horosim::{FieldConfig, Lattice, ModelParams};

pub fn run_example() -> horosim::Result<()> {
    let lat = Lattice::new(1, &[5])?;
    let params = ModelParams::massed(2.0, 0.2)?;
    let config = FieldConfig {
        t: vec![0.3, -0.1, 0.4, 0.0, -0.5],
        s: vec![0.2, -0.4, 0.1, 0.6, -0.3],
    };
    let spins = config
        .t
        .iter()
        .zip(&config.s)
        .map(|(&t, &s)| horo_to_matrix(t, s))
        .collect::<horosim::Result<Vec<_>>>()?;
    let a_matrix = action_matrix(&spins, &params, &lat)?;
    let a_horo = action_horo(&config, &params, &lat)?;
    println!("matrix form {a_matrix:.12}, horospherical form {a_horo:.12}");

    for ensemble in [horosim::Ensemble::HMassed, horosim::Ensemble::DeltaConstrained] {
        let p = ModelParams { ensemble, ..params };
        let e = effective_action(&config.t, &p, &lat)?;
        let g = grad_effective_action(&config.t, &p, &lat)?;
        println!("{ensemble:?}: E = {e:.6}, ∇E = {:?}", g.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> horosim::Result<()> {
    run_example()
}
