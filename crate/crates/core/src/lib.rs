//! Symmetric tensor networks for open quantum spin chains.

pub mod analysis;
pub mod edoracle;
pub mod impdo;
pub mod lindblad;
pub mod observables;
pub mod symtensor;

pub type C64 = num_complex::Complex64;
