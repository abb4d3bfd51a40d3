//! Dense linear algebra, sampling, and gradient checking.

pub mod gradcheck;
pub mod matrix;
pub mod nn;
pub mod rng;
pub mod stats;

pub use gradcheck::{finite_diff_grad_check, GradCheckReport};
pub use matrix::{affine, dot, norm, sigmoid, softmax_rows, Matrix};
pub use nn::{Adam, Linear, Mlp, ParamSet};
pub use rng::{sample_gaussian, sample_laplace, Rng, SeedStream};
