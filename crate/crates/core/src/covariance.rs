//! Unstructured and separable covariance fits of a matrix sample.
//!
//! The flip-flop fixed point is computed from the unstructured covariance
//! `S_n` alone: both updates are partial traces of `S_n` weighted by the
//! inverse of the other factor, so one iteration costs `O(p1^2 p2^2)`
//! regardless of the sample size.

use nalgebra::DMatrix;

use crate::error::{Result, SeparError};
use crate::kron::{self, DenseMatrix};

/// `n` observed `p1 x p2` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSample {
    p1: usize,
    p2: usize,
    data: Vec<DenseMatrix>,
}

impl MatrixSample {
    pub fn new(p1: usize, p2: usize, data: Vec<DenseMatrix>) -> Result<Self> {
        if p1 == 0 || p2 == 0 {
            return Err(SeparError::InvalidInput("dimensions must be positive".into()));
        }
        if data.is_empty() {
            return Err(SeparError::InvalidInput("sample is empty".into()));
        }
        for (i, x) in data.iter().enumerate() {
            if x.shape() != (p1, p2) {
                return Err(SeparError::DimensionMismatch(format!(
                    "observation {i} has shape {:?}, expected ({p1}, {p2})",
                    x.shape()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SeparError::InvalidInput(format!("observation {i} has a non-finite entry")));
            }
        }
        Ok(Self { p1, p2, data })
    }

    /// Builds a sample from rows holding `vec(X_i)` in column-major order.
    pub fn from_vec_rows(p1: usize, p2: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let data = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if r.len() != p1 * p2 {
                    Err(SeparError::DimensionMismatch(format!(
                        "row {i} has {} fields, expected {}",
                        r.len(),
                        p1 * p2
                    )))
                } else {
                    Ok(kron::unvec(r, p1, p2))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(p1, p2, data)
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn p1(&self) -> usize {
        self.p1
    }

    pub fn p2(&self) -> usize {
        self.p2
    }

    pub fn matrices(&self) -> &[DenseMatrix] {
        &self.data
    }

    pub fn into_matrices(self) -> Vec<DenseMatrix> {
        self.data
    }

    pub fn mean(&self) -> DenseMatrix {
        let mut m = DMatrix::zeros(self.p1, self.p2);
        for x in &self.data {
            m += x;
        }
        m / self.n() as f64
    }

    /// Applies `f` to every observation. `f` must preserve the shape.
    pub fn map(&self, f: impl Fn(&DenseMatrix) -> DenseMatrix) -> Result<Self> {
        let data: Vec<_> = self.data.iter().map(f).collect();
        let (p1, p2) = data.first().map(|x| x.shape()).unwrap_or((self.p1, self.p2));
        Self::new(p1, p2, data)
    }

    /// `{X_i'}` with the roles of `p1` and `p2` swapped.
    pub fn transposed(&self) -> Self {
        Self {
            p1: self.p2,
            p2: self.p1,
            data: self.data.iter().map(|x| x.transpose()).collect(),
        }
    }
}

/// `S_n = (1/n) sum vec(X_i - Xbar) vec(X_i - Xbar)'` (divisor `n`).
pub fn sample_covariance(sample: &MatrixSample) -> DenseMatrix {
    let n = sample.n();
    let p = sample.p1() * sample.p2();
    let mean = sample.mean();
    let mut centered = DMatrix::zeros(p, n);
    for (i, x) in sample.matrices().iter().enumerate() {
        for (dst, (a, b)) in centered.column_mut(i).iter_mut().zip(x.iter().zip(mean.iter())) {
            *dst = a - b;
        }
    }
    let mut s = &centered * centered.transpose() / n as f64;
    kron::symmetrize(&mut s);
    s
}

/// `a / det(a)^{1/p}` for SPD `a`.
pub fn det_normalize(a: &DenseMatrix) -> Result<DenseMatrix> {
    let p = a.nrows() as f64;
    let log_det = kron::log_det_spd(a)?;
    Ok(a * (-log_det / p).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// `det(s1) = 1`; `s2` carries the overall scale.
    UnitDetS1,
}

#[derive(Debug, Clone, Copy)]
pub struct FlipFlopOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FlipFlopOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 1000 }
    }
}

/// Matrix-normal maximum likelihood fit `(s1, s2)` of a separable covariance.
#[derive(Debug, Clone)]
pub struct SeparableFit {
    pub s1: DenseMatrix,
    pub s2: DenseMatrix,
    pub iterations: usize,
    pub final_residual: f64,
    pub normalization: Normalization,
    /// Fixed-point residual after every iteration.
    pub residual_history: Vec<f64>,
}

impl SeparableFit {
    /// `N(s2) (x) N(s1)`, the determinant-normalized separable covariance.
    pub fn normalized_kronecker(&self) -> Result<DenseMatrix> {
        Ok(kron::kron(&det_normalize(&self.s2)?, &det_normalize(&self.s1)?))
    }
}

/// `(1/p2) sum_{c,d} w2[c,d] S[block (c,d)]`.
fn contract_columns(s: &DenseMatrix, w2: &DenseMatrix, p1: usize, p2: usize) -> DenseMatrix {
    let mut out = DMatrix::zeros(p1, p1);
    for d in 0..p2 {
        for c in 0..p2 {
            let w = w2[(c, d)];
            if w == 0.0 {
                continue;
            }
            out += s.view((c * p1, d * p1), (p1, p1)) * w;
        }
    }
    out / p2 as f64
}

/// `(1/p1) sum_{a,b} w1[a,b] S[a + c p1, b + d p1]` over `(c, d)`.
fn contract_rows(s: &DenseMatrix, w1: &DenseMatrix, p1: usize, p2: usize) -> DenseMatrix {
    DMatrix::from_fn(p2, p2, |c, d| {
        let block = s.view((c * p1, d * p1), (p1, p1));
        block.component_mul(w1).sum() / p1 as f64
    })
}

fn spd_inverse(a: &DenseMatrix, iteration: usize) -> Result<DenseMatrix> {
    a.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(SeparError::SingularIterate { iteration })
}

/// Flip-flop iteration for the matrix-normal MLE, started at `s2 = I`.
pub fn flip_flop_mle(sample: &MatrixSample, opts: &FlipFlopOptions) -> Result<SeparableFit> {
    if sample.n() < 2 {
        return Err(SeparError::SampleTooSmall { n: sample.n(), dim: sample.p1() * sample.p2() });
    }
    flip_flop_from_covariance(&sample_covariance(sample), sample.p1(), sample.p2(), opts)
}

/// Flip-flop iteration driven by a precomputed `S_n`.
pub fn flip_flop_from_covariance(
    sn: &DenseMatrix,
    p1: usize,
    p2: usize,
    opts: &FlipFlopOptions,
) -> Result<SeparableFit> {
    assert_eq!(sn.shape(), (p1 * p2, p1 * p2), "S_n has the wrong shape");
    let frob = |m: &DenseMatrix| m.norm();

    let mut s1_raw = contract_columns(sn, &DMatrix::identity(p2, p2), p1, p2);
    let mut prev: Option<(DenseMatrix, DenseMatrix)> = None;
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;

    for it in 1..=opts.max_iter {
        let s1 = det_normalize(&s1_raw).map_err(|_| SeparError::SingularIterate { iteration: it })?;
        let s2 = contract_rows(sn, &spd_inverse(&s1, it)?, p1, p2);
        let s2_inv = spd_inverse(&s2, it)?;
        let s1_next = contract_columns(sn, &s2_inv, p1, p2);

        residual = frob(&(&s1_next - &s1)) / frob(&s1);
        history.push(residual);
        if !residual.is_finite() {
            return Err(SeparError::SingularIterate { iteration: it });
        }

        let s2_norm = det_normalize(&s2).map_err(|_| SeparError::SingularIterate { iteration: it })?;
        let change = match &prev {
            Some((a, b)) => {
                let num = (frob(&(&s1 - a)).powi(2) + frob(&(&s2_norm - b)).powi(2)).sqrt();
                num / (frob(&s1).powi(2) + frob(&s2_norm).powi(2)).sqrt()
            }
            None => f64::INFINITY,
        };

        if change < opts.tol && residual < 10.0 * opts.tol {
            return Ok(SeparableFit {
                s1,
                s2,
                iterations: it,
                final_residual: residual,
                normalization: Normalization::UnitDetS1,
                residual_history: history,
            });
        }
        prev = Some((s1, s2_norm));
        s1_raw = s1_next;
    }
    Err(SeparError::NoConvergence { iterations: opts.max_iter, residual })
}

/// Whitened comparison `V_n` of the separable and unstructured fits.
#[derive(Debug, Clone)]
pub struct ComparisonMatrix {
    pub v: DenseMatrix,
}

impl ComparisonMatrix {
    /// `||V_n - I||_F^2`.
    pub fn squared_distance_to_identity(&self) -> f64 {
        let mut d = self.v.clone();
        for i in 0..d.nrows() {
            d[(i, i)] -= 1.0;
        }
        d.norm_squared()
    }

    /// `vec(V_n - I)`.
    pub fn deviation_vec(&self) -> nalgebra::DVector<f64> {
        let mut d = kron::vec(&self.v);
        let p = self.v.nrows();
        for i in 0..p {
            d[i + i * p] -= 1.0;
        }
        d
    }
}

/// `V_n = N(S_n)^{-1/2} (N(s2) (x) N(s1)) N(S_n)^{-1/2}`.
pub fn comparison_matrix(sn: &DenseMatrix, fit: &SeparableFit) -> Result<ComparisonMatrix> {
    let root = kron::sym_inv_sqrt(&det_normalize(sn)?)?;
    let mut v = &root * fit.normalized_kronecker()? * &root;
    kron::symmetrize(&mut v);
    Ok(ComparisonMatrix { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_sample(n: usize, p1: usize, p2: usize, seed: u64) -> MatrixSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n)
            .map(|_| DMatrix::from_fn(p1, p2, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        MatrixSample::new(p1, p2, data).unwrap()
    }

    fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        (a - b).amax()
    }

    /// Direct evaluation of both fixed-point equations over the raw sample.
    fn flip_flop_equations(sample: &MatrixSample, s1: &DenseMatrix, s2: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
        let (n, p1, p2) = (sample.n() as f64, sample.p1(), sample.p2());
        let mean = sample.mean();
        let w1 = s1.clone().try_inverse().unwrap();
        let w2 = s2.clone().try_inverse().unwrap();
        let mut a = DMatrix::zeros(p1, p1);
        let mut b = DMatrix::zeros(p2, p2);
        for x in sample.matrices() {
            let c = x - &mean;
            a += &c * &w2 * c.transpose();
            b += c.transpose() * &w1 * &c;
        }
        (a / (n * p2 as f64), b / (n * p1 as f64))
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(MatrixSample::new(2, 2, vec![]).is_err());
        assert!(MatrixSample::new(2, 2, vec![DMatrix::zeros(2, 3)]).is_err());
        let mut bad = DMatrix::zeros(2, 2);
        bad[(0, 1)] = f64::NAN;
        assert!(MatrixSample::new(2, 2, vec![bad]).is_err());
    }

    #[test]
    fn covariance_of_constant_sample_is_zero() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let s = MatrixSample::new(2, 2, vec![x.clone(), x.clone(), x]).unwrap();
        assert_eq!(sample_covariance(&s).amax(), 0.0);
    }

    #[test]
    fn covariance_uses_divisor_n() {
        let s = MatrixSample::from_vec_rows(1, 1, &[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(sample_covariance(&s)[(0, 0)], 1.0);
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let s = sample_covariance(&gaussian_sample(30, 2, 3, 4));
        assert_eq!(s, s.transpose());
        let eig = s.clone().symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10 * eig.max());
    }

    #[test]
    fn covariance_recovers_kronecker_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sigma2_root = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let data = (0..100_000)
            .map(|_| DMatrix::<f64>::from_fn(2, 2, |_, _| StandardNormal.sample(&mut rng)) * &sigma2_root)
            .collect();
        let s = sample_covariance(&MatrixSample::new(2, 2, data).unwrap());
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 4.0, 4.0]));
        assert!(max_abs_diff(&s, &expected) < 0.05);
    }

    #[test]
    fn det_normalize_cases() {
        let c = DMatrix::identity(3, 3) * 7.0;
        assert!(max_abs_diff(&det_normalize(&c).unwrap(), &DMatrix::identity(3, 3)) < 1e-14);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.5]));
        assert!(max_abs_diff(&det_normalize(&d).unwrap(), &d) < 1e-14);
        assert!(det_normalize(&DMatrix::zeros(2, 2)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DMatrix::<f64>::from_fn(4, 4, |_, _| StandardNormal.sample(&mut rng));
        let a = m.transpose() * &m + DMatrix::identity(4, 4);
        let na = det_normalize(&a).unwrap();
        assert!((na.determinant() - 1.0).abs() < 1e-10);
        for lambda in [0.1, 10.0] {
            assert!(max_abs_diff(&det_normalize(&(&a * lambda)).unwrap(), &na) < 1e-12);
        }
    }

    #[test]
    fn flip_flop_with_single_row() {
        let s = gaussian_sample(50, 1, 3, 8);
        let fit = flip_flop_mle(&s, &FlipFlopOptions::default()).unwrap();
        assert!((fit.s1[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(max_abs_diff(&fit.s2, &sample_covariance(&s)) < 1e-12);
    }

    #[test]
    fn flip_flop_satisfies_both_equations() {
        let s = gaussian_sample(200, 3, 3, 9);
        let fit = flip_flop_mle(&s, &FlipFlopOptions::default()).unwrap();
        let (a, b) = flip_flop_equations(&s, &fit.s1, &fit.s2);
        assert!((&a - &fit.s1).norm() / fit.s1.norm() < 1e-8);
        assert!((&b - &fit.s2).norm() / fit.s2.norm() < 1e-8);
        assert!((fit.s1.determinant() - 1.0).abs() < 1e-8);
        assert!(fit.final_residual < 1e-9);
    }

    #[test]
    fn flip_flop_residual_decreases() {
        for seed in 0..5 {
            let s = gaussian_sample(100, 3, 2, 100 + seed);
            let fit = flip_flop_mle(&s, &FlipFlopOptions::default()).unwrap();
            for w in fit.residual_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9) || w[1] < 1e-13, "{:?}", fit.residual_history);
            }
        }
    }

    #[test]
    fn flip_flop_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let root2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2f64.sqrt(), 3f64.sqrt()]));
        let data = (0..100_000)
            .map(|_| DMatrix::<f64>::from_fn(3, 3, |_, _| StandardNormal.sample(&mut rng)) * &root2)
            .collect();
        let fit = flip_flop_mle(&MatrixSample::new(3, 3, data).unwrap(), &FlipFlopOptions::default()).unwrap();
        assert!(max_abs_diff(&fit.s1, &DMatrix::identity(3, 3)) < 0.05);
        let sigma2 = &root2 * &root2;
        let target = det_normalize(&sigma2).unwrap();
        assert!(max_abs_diff(&det_normalize(&fit.s2).unwrap(), &target) < 0.05);
    }

    #[test]
    fn flip_flop_reports_singular_iterates() {
        // n = 2 observations cannot support a 3x3 row covariance with p2 = 1.
        let s = gaussian_sample(2, 3, 1, 3);
        let err = flip_flop_mle(&s, &FlipFlopOptions::default()).unwrap_err();
        assert!(matches!(err, SeparError::SingularIterate { .. }), "{err:?}");
    }

    #[test]
    fn flip_flop_reports_non_convergence() {
        let s = gaussian_sample(40, 3, 3, 12);
        let err = flip_flop_mle(&s, &FlipFlopOptions { tol: 1e-10, max_iter: 2 }).unwrap_err();
        assert!(matches!(err, SeparError::NoConvergence { iterations: 2, .. }));
    }

    #[test]
    fn comparison_matrix_of_exactly_separable_covariance() {
        let s1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let s2 = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 3.0, 0.1, 0.0, 0.1, 0.5]);
        let fit = SeparableFit {
            s1: s1.clone(),
            s2: s2.clone(),
            iterations: 1,
            final_residual: 0.0,
            normalization: Normalization::UnitDetS1,
            residual_history: vec![],
        };
        let sn = kron::kron(&s2, &s1) * 4.2;
        let v = comparison_matrix(&sn, &fit).unwrap();
        assert!(max_abs_diff(&v.v, &DMatrix::identity(6, 6)) < 1e-12);
        assert!(v.squared_distance_to_identity() < 1e-20);
    }

    #[test]
    fn comparison_matrix_invariants() {
        let s = gaussian_sample(60, 2, 3, 17);
        let sn = sample_covariance(&s);
        let fit = flip_flop_mle(&s, &FlipFlopOptions::default()).unwrap();
        let v = comparison_matrix(&sn, &fit).unwrap();
        assert_eq!(v.v, v.v.transpose());
        assert!((v.v.determinant() - 1.0).abs() < 1e-8);

        let mut rescaled = fit.clone();
        rescaled.s1 *= 3.5;
        rescaled.s2 /= 3.5;
        let w = comparison_matrix(&sn, &rescaled).unwrap();
        assert!(max_abs_diff(&v.v, &w.v) < 1e-12);
    }

    #[test]
    fn comparison_matrix_needs_full_rank() {
        let s = gaussian_sample(4, 2, 3, 2);
        let sn = sample_covariance(&s);
        let fit = SeparableFit {
            s1: DMatrix::identity(2, 2),
            s2: DMatrix::identity(3, 3),
            iterations: 0,
            final_residual: 0.0,
            normalization: Normalization::UnitDetS1,
            residual_history: vec![],
        };
        assert!(matches!(comparison_matrix(&sn, &fit), Err(SeparError::NotPositiveDefinite { .. })));
    }
}
