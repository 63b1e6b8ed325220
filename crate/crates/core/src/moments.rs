//! Fourth moments of matrix-spherical cores.
//!
//! A matrix-spherical `Z` has fourth-moment matrix
//! `E[(vec Z (x) vec Z)(vec Z (x) vec Z)']` determined by two cross moments,
//! `m2 = E(z11^2 z12^2)` and `m4 = E(z11^2 z22^2)`. This module holds the
//! closed forms for those moments and the empirical estimators `t1`, `t2`
//! of the null-law weights `(m4 + m2) / beta^2` and `(3 m4 - m2) / beta^2`.

use nalgebra::DMatrix;

use crate::covariance::{MatrixSample, SeparableFit};
use crate::error::{Result, SeparError};
use crate::kron::{self, DenseMatrix};

/// `t1` below this is treated as degenerate rather than used as a weight.
pub const MIN_T1: f64 = 1e-12;

/// Empirical fourth-moment summaries of a standardized sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimates {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub t1: f64,
    /// Truncated at zero; see `t2_truncated`.
    pub t2: f64,
    pub t2_truncated: bool,
}

/// The five fourth moments of a spherical core plus `beta = E z11^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalMoments {
    pub beta: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub m5: f64,
}

impl SphericalMoments {
    /// Fills in `m1 = 3 m2`, `m3 = m2`, `m5 = (m2 - m4) / 2`.
    pub fn from_cross_moments(beta: f64, m2: f64, m4: f64) -> Self {
        Self { beta, m1: 3.0 * m2, m2, m3: m2, m4, m5: 0.5 * (m2 - m4) }
    }

    /// Standard matrix normal: `beta = m2 = m4 = 1`.
    pub fn gaussian() -> Self {
        Self::from_cross_moments(1.0, 1.0, 1.0)
    }

    /// Checks the moment relations of a spherical law to relative tolerance `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let scale = self.m1.abs().max(self.m2.abs()).max(self.m4.abs()).max(f64::MIN_POSITIVE);
        let close = |a: f64, b: f64| (a - b).abs() <= tol * scale;
        if !close(self.m1, 3.0 * self.m2) || !close(self.m3, self.m2) || !close(2.0 * self.m5, self.m2 - self.m4) {
            return Err(SeparError::InvalidMoments(format!("moment relations violated: {self:?}")));
        }
        if self.m4 + self.m2 <= 0.0 || 3.0 * self.m4 - self.m2 < -tol * scale {
            return Err(SeparError::InvalidMoments(format!("null weights not positive: {self:?}")));
        }
        Ok(())
    }

    /// Limits of `(t1, t2)`: `((m4 + m2) / beta^2, (3 m4 - m2) / beta^2)`.
    pub fn null_weights(&self) -> (f64, f64) {
        let b2 = self.beta * self.beta;
        ((self.m4 + self.m2) / b2, (3.0 * self.m4 - self.m2) / b2)
    }
}

/// Moments of the singular values `lambda_1, ..., lambda_p2` of a spherical core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularLaw {
    /// `E lambda_1^4`
    pub e_l4: f64,
    /// `E lambda_1^2 lambda_2^2`
    pub e_l2l2: f64,
    /// `E lambda_1^2`
    pub e_l2: f64,
}

impl SingularLaw {
    /// Singular values identically one.
    pub fn unit() -> Self {
        Self { e_l4: 1.0, e_l2l2: 1.0, e_l2: 1.0 }
    }

    /// Symmetrized empirical moments from draws of singular-value vectors.
    pub fn from_draws<'a>(draws: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let (mut l4, mut l2l2, mut l2) = (0.0, 0.0, 0.0);
        let (mut n4, mut n22) = (0usize, 0usize);
        for lam in draws {
            for (i, &a) in lam.iter().enumerate() {
                let a2 = a * a;
                l4 += a2 * a2;
                l2 += a2;
                n4 += 1;
                for &b in &lam[i + 1..] {
                    l2l2 += a2 * b * b;
                    n22 += 1;
                }
            }
        }
        Self {
            e_l4: l4 / n4.max(1) as f64,
            e_l2l2: if n22 > 0 { l2l2 / n22 as f64 } else { 0.0 },
            e_l2: l2 / n4.max(1) as f64,
        }
    }
}

/// `Y_i = s1^{-1/2} (X_i - Xbar) s2^{-1/2}`.
pub fn standardize_sample(sample: &MatrixSample, fit: &SeparableFit) -> Result<MatrixSample> {
    if fit.s1.nrows() != sample.p1() || fit.s2.nrows() != sample.p2() {
        return Err(SeparError::DimensionMismatch("fit does not match sample dimensions".into()));
    }
    let left = kron::sym_inv_sqrt(&fit.s1)?;
    let right = kron::sym_inv_sqrt(&fit.s2)?;
    let mean = sample.mean();
    sample.map(|x| &left * (x - &mean) * &right)
}

/// The estimators `d1`, `d2`, `d3` and the weight estimates `t1`, `t2`.
pub fn moment_estimates(standardized: &MatrixSample) -> Result<MomentEstimates> {
    let (n, p1, p2) = (standardized.n(), standardized.p1(), standardized.p2());
    if p1 < 2 || p2 < 2 {
        return Err(SeparError::DegenerateDimensions { p1, p2 });
    }
    if n < 2 {
        return Err(SeparError::SampleTooSmall { n, dim: p1 * p2 });
    }
    let (mut s2, mut s4, mut e4) = (0.0, 0.0, 0.0);
    for y in standardized.matrices() {
        let sq = y.norm_squared();
        s2 += sq;
        s4 += sq * sq;
        e4 += y.iter().map(|v| v.powi(4)).sum::<f64>();
    }
    let denom = (n * p1 * p2) as f64;
    let (d1, d2, d3) = (s2 / denom, s4 / denom, e4 / denom);
    if d1.is_nan() || d1 <= 0.0 {
        return Err(SeparError::InvalidMoments(format!("d1 = {d1} is not positive")));
    }

    let (p1f, p2f) = (p1 as f64, p2 as f64);
    let scale = (p1f - 1.0) * (p2f - 1.0) * d1 * d1;
    let t1 = (d2 + (p1f * p2f - 2.0 * p1f - 2.0 * p2f) * d3 / 3.0) / scale;
    let t2_raw = (3.0 * d2 - (p1f + 2.0) * (p2f + 2.0) * d3 / 3.0) / scale;
    if t1.is_nan() || t1 <= MIN_T1 {
        return Err(SeparError::InvalidMoments(format!("t1 = {t1:e} is not positive")));
    }
    let t2_truncated = t2_raw < 0.0;
    Ok(MomentEstimates { d1, d2, d3, t1, t2: t2_raw.max(0.0), t2_truncated })
}

/// Cross moments of `Z = U Lambda V'` from the singular-value law.
///
/// Inputs with `p1 < p2` are handled by transposition, which leaves the
/// entry moments unchanged.
pub fn moments_from_singular_law(law: &SingularLaw, p1: usize, p2: usize) -> SphericalMoments {
    let (p1, p2) = if p1 < p2 { (p2, p1) } else { (p1, p2) };
    assert!(p1 >= 2, "moments_from_singular_law needs max(p1, p2) >= 2");
    let (a, b) = (p1 as f64, p2 as f64);
    let c = a * (a + 2.0) * b * (b + 2.0);
    let m4 = b * law.e_l4 / c + (b / (a - 1.0)) * ((a + 1.0) * (b + 1.0) + 2.0) * law.e_l2l2 / c;
    let m2 = m4 + 2.0 * b * law.e_l4 / c - 2.0 * b * (1.0 + (b + 2.0) / (a - 1.0)) * law.e_l2l2 / c;
    let beta = b * law.e_l2 / (a * b);
    SphericalMoments::from_cross_moments(beta, m2, m4)
}

/// Fourth moments of one column block entry of a Haar frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarMoments {
    /// `E u11^4`
    pub u11_4: f64,
    /// `E u11^2 u12^2`
    pub u11_u12: f64,
    /// `E u11^2 u21^2`
    pub u11_u21: f64,
    /// `E u11^2 u22^2`
    pub u11_u22: f64,
}

pub fn haar_moments(p1: usize) -> HaarMoments {
    assert!(p1 >= 2, "haar_moments needs p1 >= 2");
    let p = p1 as f64;
    let base = 1.0 / (p * (p + 2.0));
    HaarMoments { u11_4: 3.0 * base, u11_u12: base, u11_u21: base, u11_u22: base * (p + 1.0) / (p - 1.0) }
}

/// `A = E[(vec Z (x) vec Z)(vec Z (x) vec Z)']` for a spherical core.
pub fn fourth_moment_matrix(moments: &SphericalMoments, p1: usize, p2: usize) -> DenseMatrix {
    let b = kron::building_blocks(p1, p2);
    let side = p1 * p1 * p2 * p2;
    let mixed = &b.j1 * &b.k2 + &b.j2 * &b.k1 + &b.j1 + &b.j2 + &b.k1 + &b.k2;
    let pure = DMatrix::identity(side, side) + &b.j1 * &b.j2 + &b.k1 * &b.k2;
    let mut a = mixed * (0.5 * (moments.m2 - moments.m4)) + pure * moments.m4;
    kron::symmetrize(&mut a);
    a
}

/// Theoretical `(E||Z||^2 / (p1 p2), E||Z||^4 / (p1 p2), mean E z_jk^4)`.
pub fn frobenius_moment_identities(moments: &SphericalMoments, p1: usize, p2: usize) -> (f64, f64, f64) {
    let (a, b) = (p1 as f64, p2 as f64);
    (
        moments.beta,
        moments.m2 * (a + b + 1.0) + moments.m4 * (a - 1.0) * (b - 1.0),
        3.0 * moments.m2,
    )
}
