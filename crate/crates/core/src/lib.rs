pub mod error;
pub mod experiments;
pub mod fock;
pub mod hartree;
pub mod hierarchy;
pub mod lattice;
pub mod marginals;
pub mod probes;
pub mod propagate;
pub mod scattering;

pub use error::{Error, Result};
