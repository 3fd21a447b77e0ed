//! Simulation and verification toolkit for the hyperbolic H² sigma model on
//! periodic lattices, with a band random-matrix companion.

pub mod cli;
pub mod error;
pub mod hessian;
pub mod lattice;
pub mod linalg;
pub mod model;
pub mod observables;
pub mod rmt;
pub mod sampler;

pub use error::{Error, Result};
pub use lattice::{build_lattice, Lattice, LatticeShape};
pub use model::{Ensemble, FieldConfig, ModelParams};
