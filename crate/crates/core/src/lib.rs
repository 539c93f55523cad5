//! Particles coupled to a scalar field: classical particle-field dynamics,
//! a truncated quantum model on a particle grid tensored with a bosonic Fock
//! space, and the numerical checks relating the two as `hbar -> 0`.

pub mod classical;
pub mod config;
pub mod correspondence;
pub mod error;
pub mod estimates;
pub mod export;
pub mod fock;
pub mod linalg;
pub mod model;
pub mod quantum;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
