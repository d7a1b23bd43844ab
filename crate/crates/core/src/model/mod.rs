//! Concrete functionals: the ℓ² model with its closed-form critical set, the
//! sublinear energy on an H₀¹ grid, and the wrapper built on it.

mod clark;
mod sublinear;

pub use clark::*;
pub use sublinear::*;
