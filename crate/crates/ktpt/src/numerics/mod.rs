//! Dense matrix arithmetic and the deterministic PCG32 generator that every
//! other module builds on.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::Pcg32;
