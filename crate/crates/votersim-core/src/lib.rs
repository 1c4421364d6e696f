#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod coalesce;
pub mod dual;
pub mod engine;
pub mod error;
pub mod kernel;
pub mod lattice;
pub mod model;
pub mod pde;
pub mod reaction;
pub mod rng;

pub use error::{Error, Result};
