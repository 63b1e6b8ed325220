//! Fixtures shared by the benchmarks.

use separ_core::{CoreSpec, MatrixSample, ModelSpec};

/// Standard Gaussian sample, seeded so runs compare like with like.
pub fn gaussian_sample(n: usize, p1: usize, p2: usize) -> MatrixSample {
    ModelSpec::standard(p1, p2, CoreSpec::Gaussian).sample(n, 0x5eed).expect("valid model")
}

pub fn matrix_t_sample(n: usize, p1: usize, p2: usize, nu: f64) -> MatrixSample {
    ModelSpec::standard(p1, p2, CoreSpec::MatrixT { nu }).sample(n, 0x5eed).expect("valid model")
}
