//! Exact and simulated analysis of equi-energy ladders, independence
//! samplers and Swendsen-Wang cut segmentation on enumerable state spaces.

pub mod eeladder;
pub mod error;
pub mod kernels;
pub mod rng;
pub mod spectral;
pub mod statespace;
pub mod swcut;

pub use error::{Error, Result};
