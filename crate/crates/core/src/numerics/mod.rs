//! Dense matrices, seeded randomness and a finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod rng;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport};
pub use matrix::{pairwise_euclidean, Matrix};
pub use rng::{derive_seed, rng_normal, Rng};
