pub mod cli;
pub mod coeff_families;
pub mod error;
pub mod experiments;
pub mod io;
pub mod lattice_sim;
pub mod limit_calc;
pub mod numerics;
pub mod region_atlas;

pub use error::{Error, Result};
