#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dgm;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod gsd;
pub mod math;
pub mod precision;
pub mod rng;
pub mod trial;

pub use error::{Error, Result};
