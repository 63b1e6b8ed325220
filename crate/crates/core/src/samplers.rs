//! Random generation from the matrix elliptical model
//! `X = M + Sigma1^{1/2} Z Sigma2^{1/2}` with a matrix-spherical core `Z`.
//!
//! Every sampler is driven by a `u64` seed. Replicate streams are derived
//! with [`split_seed`], so parallel runs are reproducible.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::covariance::MatrixSample;
use crate::error::{Result, SeparError};
use crate::kron::{self, DenseMatrix};

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for replicate `replicate` of experiment `cell`:
/// `h(h(h(master) ^ cell) ^ replicate)` with `h` the SplitMix64 finalizer.
pub fn split_seed(master: u64, cell: u64, replicate: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ cell) ^ replicate)
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut SimRng) -> DenseMatrix {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Draws the singular values `lambda_1..lambda_p2` of a spherical core.
///
/// Implementations should return values whose joint law is invariant to
/// permutations; this is not checked.
pub trait SingularLawSampler: Send + Sync + fmt::Debug {
    fn sample(&self, p2: usize, rng: &mut SimRng) -> Vec<f64>;
}

/// `lambda_i = value` for all `i`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantLaw {
    pub value: f64,
}

impl SingularLawSampler for ConstantLaw {
    fn sample(&self, p2: usize, _rng: &mut SimRng) -> Vec<f64> {
        vec![self.value; p2]
    }
}

/// Singular values of a `p1 x p2` standard Gaussian matrix, in random order.
#[derive(Debug, Clone, Copy)]
pub struct GaussianLaw {
    pub p1: usize,
}

impl SingularLawSampler for GaussianLaw {
    fn sample(&self, p2: usize, rng: &mut SimRng) -> Vec<f64> {
        let g = gaussian_matrix(self.p1.max(p2), p2, rng);
        shuffled(g.singular_values().as_slice().to_vec(), rng)
    }
}

/// Singular values of a `p1 x p2` matrix-t draw, in random order.
#[derive(Debug, Clone, Copy)]
pub struct MatrixTLaw {
    pub p1: usize,
    pub nu: f64,
}

impl SingularLawSampler for MatrixTLaw {
    fn sample(&self, p2: usize, rng: &mut SimRng) -> Vec<f64> {
        let z = matrix_t_draw(self.p1.max(p2), p2, self.nu, rng);
        shuffled(z.singular_values().as_slice().to_vec(), rng)
    }
}

fn shuffled(mut v: Vec<f64>, rng: &mut SimRng) -> Vec<f64> {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
    v
}

#[derive(Debug, Clone)]
pub enum CoreSpec {
    Gaussian,
    /// `nu = inf` is the Gaussian core.
    MatrixT { nu: f64 },
    Spherical(Arc<dyn SingularLawSampler>),
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub m: DenseMatrix,
    pub sigma1: DenseMatrix,
    pub sigma2: DenseMatrix,
    pub core: CoreSpec,
}

impl ModelSpec {
    /// Zero mean, identity covariances.
    pub fn standard(p1: usize, p2: usize, core: CoreSpec) -> Self {
        Self { m: DMatrix::zeros(p1, p2), sigma1: DMatrix::identity(p1, p1), sigma2: DMatrix::identity(p2, p2), core }
    }

    pub fn p1(&self) -> usize {
        self.m.nrows()
    }

    pub fn p2(&self) -> usize {
        self.m.ncols()
    }

    /// `n` draws of `X`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<MatrixSample> {
        let (p1, p2) = (self.p1(), self.p2());
        let z = match &self.core {
            CoreSpec::Gaussian => sample_matrix_normal(n, p1, p2, seed)?,
            CoreSpec::MatrixT { nu } => sample_matrix_t(n, p1, p2, *nu, seed)?,
            CoreSpec::Spherical(law) => sample_spherical(n, p1, p2, law.as_ref(), seed)?,
        };
        apply_model(&z, self)
    }
}

/// `n` matrices of independent standard normal entries.
pub fn sample_matrix_normal(n: usize, p1: usize, p2: usize, seed: u64) -> Result<MatrixSample> {
    let mut rng = rng_from_seed(seed);
    MatrixSample::new(p1, p2, (0..n).map(|_| gaussian_matrix(p1, p2, &mut rng)).collect())
}

/// `Z = sqrt(nu) W^{-1/2} N` with `W ~ Wishart_p1(I, nu + p1 - 1)` built by the
/// Bartlett decomposition and `W^{-1/2}` the symmetric root. Entries have
/// variance `nu / (nu - 2)`.
fn matrix_t_draw(p1: usize, p2: usize, nu: f64, rng: &mut SimRng) -> DenseMatrix {
    let dof = nu + p1 as f64 - 1.0;
    let mut l = DMatrix::zeros(p1, p1);
    for i in 0..p1 {
        let chi = ChiSquared::new(dof - i as f64).expect("Bartlett dof is positive");
        l[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            l[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let w = &l * l.transpose();
    let eig = SymmetricEigen::new(w);
    let inv_root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt()))
        * eig.eigenvectors.transpose();
    inv_root * gaussian_matrix(p1, p2, rng) * nu.sqrt()
}

/// Matrix-t core `T_{p1 x p2}(0, I, I, nu)`; `nu = inf` gives the matrix normal.
pub fn sample_matrix_t(n: usize, p1: usize, p2: usize, nu: f64, seed: u64) -> Result<MatrixSample> {
    if nu.is_infinite() && nu > 0.0 {
        return sample_matrix_normal(n, p1, p2, seed);
    }
    if nu.is_nan() || nu <= 0.0 {
        return Err(SeparError::InvalidInput(format!("matrix-t needs nu > 0, got {nu}")));
    }
    if nu <= 4.0 {
        log::warn!("matrix-t with nu = {nu}: fourth moments are infinite");
    }
    let mut rng = rng_from_seed(seed);
    MatrixSample::new(p1, p2, (0..n).map(|_| matrix_t_draw(p1, p2, nu, &mut rng)).collect())
}

/// First `p2` columns of a Haar orthogonal matrix: QR of a Gaussian matrix
/// with the signs of `diag(R)` moved into `Q`.
fn haar_frame(p1: usize, p2: usize, rng: &mut SimRng) -> DenseMatrix {
    let qr = gaussian_matrix(p1, p2, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..p2 {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn sample_haar_frame(p1: usize, p2: usize, seed: u64) -> Result<DenseMatrix> {
    if p2 == 0 || p1 < p2 {
        return Err(SeparError::InvalidInput(format!("Haar frame needs p1 >= p2 >= 1, got {p1} x {p2}")));
    }
    Ok(haar_frame(p1, p2, &mut rng_from_seed(seed)))
}

/// `n` independent Haar frames from one stream.
pub fn sample_haar_frames(n: usize, p1: usize, p2: usize, seed: u64) -> Result<Vec<DenseMatrix>> {
    if p2 == 0 || p1 < p2 {
        return Err(SeparError::InvalidInput(format!("Haar frame needs p1 >= p2 >= 1, got {p1} x {p2}")));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| haar_frame(p1, p2, &mut rng)).collect())
}

/// Draws `U diag(lambda) V'` with independent Haar `U` (`p1 x p2`), `V` (`p2 x p2`).
pub fn sample_spherical(
    n: usize,
    p1: usize,
    p2: usize,
    law: &dyn SingularLawSampler,
    seed: u64,
) -> Result<MatrixSample> {
    if p2 == 0 || p1 < p2 {
        return Err(SeparError::InvalidInput(format!("spherical sampler needs p1 >= p2 >= 1, got {p1} x {p2}")));
    }
    let mut rng = rng_from_seed(seed);
    let data = (0..n)
        .map(|_| {
            let lam = law.sample(p2, &mut rng);
            let mut u = haar_frame(p1, p2, &mut rng);
            let v = haar_frame(p2, p2, &mut rng);
            for (j, l) in lam.iter().enumerate() {
                u.column_mut(j).scale_mut(*l);
            }
            u * v.transpose()
        })
        .collect();
    MatrixSample::new(p1, p2, data)
}

/// `X_i = M + Sigma1^{1/2} Z_i Sigma2^{1/2}` with symmetric square roots.
pub fn apply_model(z: &MatrixSample, spec: &ModelSpec) -> Result<MatrixSample> {
    if z.p1() != spec.p1() || z.p2() != spec.p2() || spec.sigma1.nrows() != z.p1() || spec.sigma2.nrows() != z.p2() {
        return Err(SeparError::DimensionMismatch(format!(
            "core is {} x {} but the model is {} x {}",
            z.p1(),
            z.p2(),
            spec.p1(),
            spec.p2()
        )));
    }
    let left = kron::sym_sqrt(&spec.sigma1)?;
    let right = kron::sym_sqrt(&spec.sigma2)?;
    z.map(|x| &spec.m + &left * x * &right)
}

/// Multiplies entry (1,1) of every observation by `1 + tau / sqrt(n)`.
pub fn local_alternative(sample: &MatrixSample, tau: f64) -> MatrixSample {
    if tau == 0.0 {
        return sample.clone();
    }
    let factor = 1.0 + tau / (sample.n() as f64).sqrt();
    sample
        .map(|x| {
            let mut y = x.clone();
            y[(0, 0)] *= factor;
            y
        })
        .expect("scaling keeps entries finite")
}
