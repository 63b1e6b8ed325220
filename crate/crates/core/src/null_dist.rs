//! Null laws: degrees of freedom, chi-square tails, weighted chi-square
//! mixtures and the Wald weighting matrix.

use std::f64::consts::PI;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Result, SeparError};
use crate::kron::{self, DenseMatrix, WaldGeometry};
use crate::moments::MomentEstimates;

pub const DEFAULT_QUADRATURE_TOL: f64 = 1e-8;

/// Blocks integrated before giving up on the oscillatory tail.
const MAX_BLOCKS: usize = 4000;
/// Tail sequences shorter than this are not extrapolated.
const MIN_WYNN_TERMS: usize = 16;
/// Only the most recent partial sums enter the epsilon table.
const WYNN_WINDOW: usize = 40;
const MAX_SPLIT_DEPTH: u32 = 24;

/// `(d1, d2)`: degrees of freedom of the two mixture components of the norm test.
pub fn norm_test_dfs(p1: usize, p2: usize) -> (usize, usize) {
    assert!(p1 >= 1 && p2 >= 1, "dimensions must be positive");
    let d1 = (p1 + 2) * (p1 - 1) * (p2 + 2) * (p2 - 1) / 4;
    let d2 = p1 * p2 * (p1 - 1) * (p2 - 1) / 4;
    (d1, d2)
}

/// Degrees of freedom of the Wald statistic when both projections are used.
pub fn wald_df(p1: usize, p2: usize) -> usize {
    assert!(p1 >= 1 && p2 >= 1, "dimensions must be positive");
    ((p1 * p1 - 1) * (p2 * p2 - 1) + (p1 - 1) * (p2 - 1)) / 2
}

/// `P(chi2_df > x)`.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    assert!(df >= 1, "chi-square needs df >= 1");
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("df is positive").sf(x)
}

/// `sum_j a_j chi2_{d_j}` with independent components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureSpec {
    components: Vec<(f64, usize)>,
}

impl MixtureSpec {
    /// Drops components with zero weight or zero df.
    pub fn new(components: impl IntoIterator<Item = (f64, usize)>) -> Result<Self> {
        let mut kept = Vec::new();
        for (a, d) in components {
            if !a.is_finite() || a < 0.0 {
                return Err(SeparError::InvalidInput(format!("mixture weight {a} is not a nonnegative number")));
            }
            if a > 0.0 && d > 0 {
                kept.push((a, d));
            }
        }
        Ok(Self { components: kept })
    }

    pub fn components(&self) -> &[(f64, usize)] {
        &self.components
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|&(a, d)| a * d as f64).sum()
    }
}

impl std::fmt::Display for MixtureSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.components.is_empty() {
            return write!(f, "point mass at 0");
        }
        for (i, (a, d)) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{a:.6}*chi2({d})")?;
        }
        Ok(())
    }
}

/// `P(sum_j a_j chi2_{d_j} > t)` by inverting the characteristic function.
///
/// The Imhof integrand is integrated over half periods of `sin(t u / 2)`.
/// The range is cut where the decay envelope `1 / (u rho(u))` guarantees the
/// tail is below `tol`; when that point is out of reach (few degrees of
/// freedom) the block sums are extrapolated with Wynn's epsilon algorithm.
pub fn mixture_sf(t: f64, spec: &MixtureSpec, tol: f64) -> Result<f64> {
    if !t.is_finite() {
        if t.is_nan() {
            return Err(SeparError::InvalidInput("mixture_sf at NaN".into()));
        }
        return Ok(if t > 0.0 { 0.0 } else { 1.0 });
    }
    if spec.is_empty() {
        return Ok(if t < 0.0 { 1.0 } else { 0.0 });
    }
    if t <= 0.0 {
        return Ok(1.0);
    }
    let comps = spec.components();
    let integrand = |u: f64| imhof_integrand(u, t, comps);
    // Decay of rho(u) sets in beyond u ~ 1 / max a_j.
    let scale = 1.0 / comps.iter().map(|c| c.0).fold(0.0, f64::max);

    // Integral error budget; the result is 1/2 + I / pi.
    let budget = tol * PI;
    let k: f64 = comps.iter().map(|&(_, d)| d as f64 / 2.0).sum();
    let log_prod: f64 = comps.iter().map(|&(a, d)| d as f64 / 2.0 * a.ln()).sum();
    let envelope_end = ((-(budget / 4.0).ln() - k.ln() - log_prod) / k).exp();

    let mut block = 2.0 * PI / t;
    if envelope_end < block {
        block = envelope_end;
    }
    let n_envelope = (envelope_end / block).ceil();

    let value = if n_envelope <= MAX_BLOCKS as f64 {
        let n = n_envelope as usize;
        let per_block = budget / (4.0 * n as f64);
        let mut sum = 0.0;
        for i in 0..n {
            let (a, b) = (i as f64 * block, ((i + 1) as f64 * block).min(envelope_end));
            sum += integrate_block(&integrand, a, b, per_block, scale, MAX_SPLIT_DEPTH)?;
        }
        sum
    } else {
        extrapolated_integral(&integrand, block, budget, scale)?
    };

    let p = 0.5 + value / PI;
    if !(-1e-10..=1.0 + 1e-10).contains(&p) {
        log::debug!("mixture_sf quadrature overshoot: {p:e}");
    }
    Ok(p.clamp(0.0, 1.0))
}

fn imhof_integrand(u: f64, t: f64, comps: &[(f64, usize)]) -> f64 {
    if u < 1e-300 {
        let slope: f64 = comps.iter().map(|&(a, d)| a * d as f64).sum();
        return 0.5 * (slope - t);
    }
    let mut theta = -0.5 * t * u;
    let mut log_rho = 0.0;
    for &(a, d) in comps {
        let au = a * u;
        theta += 0.5 * d as f64 * au.atan();
        log_rho += 0.25 * d as f64 * (au * au).ln_1p();
    }
    theta.sin() / (u * log_rho.exp())
}

/// Clenshaw-Curtis quadrature, bisected on failure. Intervals much longer
/// than `scale` are split geometrically so the bulk near `a` gets resolved.
///
/// The crate's double-exponential rule reports spurious convergence on some
/// half periods (error estimate 1e-16, actual error 1e-8), so it is not used.
fn integrate_block(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, scale: f64, depth: u32) -> Result<f64> {
    let out = quadrature::clenshaw_curtis::integrate(f, a, b, tol);
    if out.integral.is_finite() && out.error_estimate <= tol.max(1e-16) {
        return Ok(out.integral);
    }
    if depth == 0 {
        return Err(SeparError::QuadratureFailure { tolerance: tol, achieved: out.error_estimate });
    }
    let left = a.max(scale);
    let mid = if b > 16.0 * left { (left * b).sqrt() } else { 0.5 * (a + b) };
    Ok(integrate_block(f, a, mid, tol / 2.0, scale, depth - 1)?
        + integrate_block(f, mid, b, tol / 2.0, scale, depth - 1)?)
}

fn extrapolated_integral(f: &impl Fn(f64) -> f64, block: f64, budget: f64, scale: f64) -> Result<f64> {
    let per_block = budget / 1e3;
    let mut partial = Vec::with_capacity(MAX_BLOCKS);
    let mut sum = 0.0;
    let mut last: Option<f64> = None;
    let mut achieved = f64::INFINITY;
    // Early estimates can agree by accident, so two successive changes must be small.
    let mut settled = 0;
    for i in 0..MAX_BLOCKS {
        let (a, b) = (i as f64 * block, (i + 1) as f64 * block);
        sum += integrate_block(f, a, b, per_block, scale, MAX_SPLIT_DEPTH)?;
        partial.push(sum);
        if partial.len() < MIN_WYNN_TERMS {
            continue;
        }
        let start = partial.len().saturating_sub(WYNN_WINDOW);
        let estimate = wynn_epsilon(&partial[start..]);
        if let Some(prev) = last {
            achieved = (estimate - prev).abs();
            settled = if achieved < budget / 4.0 { settled + 1 } else { 0 };
            if settled == 2 {
                return Ok(estimate);
            }
        }
        last = Some(estimate);
    }
    Err(SeparError::QuadratureFailure { tolerance: budget / PI, achieved: achieved / PI })
}

/// Limit estimate of a sequence from the last even column of the epsilon table.
fn wynn_epsilon(seq: &[f64]) -> f64 {
    let n = seq.len();
    // prev holds eps_{k-1}, cur holds eps_k, both indexed by position.
    let mut prev = vec![0.0; n + 1];
    let mut cur: Vec<f64> = seq.to_vec();
    let mut best = *seq.last().unwrap();
    for k in 1..n {
        let len = n - k;
        let mut next = vec![0.0; len];
        for j in 0..len {
            let diff = cur[j + 1] - cur[j];
            if diff == 0.0 {
                return if k % 2 == 1 { cur[j + 1] } else { best };
            }
            next[j] = prev[j + 1] + 1.0 / diff;
        }
        prev = cur;
        cur = next;
        if k % 2 == 0 {
            best = *cur.last().unwrap();
        }
    }
    best
}

/// The Wald weighting matrix and the df of its quadratic form.
#[derive(Debug, Clone)]
pub struct WaldWeight {
    pub upsilon: DenseMatrix,
    /// Rank of `upsilon`: `wald_df`, or `d1` when the second projection is dropped.
    pub df: usize,
    pub used_g2: bool,
}

/// `(1/t1) B0 G1 B0' + (1/t2) B0 G2 B0'`, without the second term when `t2` was truncated.
pub fn upsilon_hat(estimates: &MomentEstimates, geometry: &WaldGeometry) -> Result<WaldWeight> {
    let (t1, t2) = (estimates.t1, estimates.t2);
    if !t1.is_finite() || t1 <= 0.0 {
        return Err(SeparError::InvalidMoments(format!("t1 = {t1:e} is not positive")));
    }
    let used_g2 = !estimates.t2_truncated && t2 > 0.0;
    let mut upsilon = &geometry.proj1 / t1;
    if used_g2 {
        upsilon += &geometry.proj2 / t2;
    }
    kron::symmetrize(&mut upsilon);
    let (p1, p2) = (geometry.p1, geometry.p2);
    let df = if used_g2 { wald_df(p1, p2) } else { norm_test_dfs(p1, p2).0 };
    Ok(WaldWeight { upsilon, df, used_g2 })
}
