//! Monte Carlo consistency checks of the closed-form moment results and the
//! mixture tail probabilities.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SeparError};
use crate::kron::{self, DenseMatrix};
use crate::moments::{fourth_moment_matrix, haar_moments, moments_from_singular_law, SingularLaw, SphericalMoments};
use crate::null_dist::{chi2_sf, mixture_sf, MixtureSpec, DEFAULT_QUADRATURE_TOL};
use crate::samplers::{
    sample_haar_frames, sample_matrix_normal, sample_matrix_t, sample_spherical, split_seed,
    ConstantLaw, SimRng,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Moments,
    FourthMomentMatrix,
    Haar,
    MixtureCdf,
    All,
}

impl Suite {
    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Moments => "moments",
            Suite::FourthMomentMatrix => "fourth-moment-matrix",
            Suite::Haar => "haar",
            Suite::MixtureCdf => "mixture-cdf",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = SeparError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moments" => Ok(Suite::Moments),
            "fourth-moment-matrix" => Ok(Suite::FourthMomentMatrix),
            "haar" => Ok(Suite::Haar),
            "mixture-cdf" => Ok(Suite::MixtureCdf),
            "all" => Ok(Suite::All),
            other => Err(SeparError::InvalidInput(format!("unknown suite '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub achieved: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, suite: Suite, name: impl Into<String>, achieved: f64, tolerance: f64) {
        let passed = achieved.is_finite() && achieved <= tolerance;
        self.checks.push(Check { suite, name: name.into(), achieved, tolerance, passed });
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "[{}] {:<20} {:<52} error {:.3e} (tolerance {:.3e})",
                if c.passed { "PASS" } else { "FAIL" },
                c.suite.as_str(),
                c.name,
                c.achieved,
                c.tolerance
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Draws for the moment and Haar checks.
    pub draws: usize,
    /// Draws for the mixture tail check.
    pub mixture_draws: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { draws: 1_000_000, mixture_draws: 10_000_000 }
    }
}

pub fn run_verification(suite: Suite, seed: u64) -> Result<VerificationReport> {
    run_verification_with(suite, seed, &VerifyOptions::default())
}

pub fn run_verification_with(suite: Suite, seed: u64, opts: &VerifyOptions) -> Result<VerificationReport> {
    let mut report = VerificationReport::default();
    let all = suite == Suite::All;
    if all || suite == Suite::Moments {
        moments_suite(&mut report, seed, opts)?;
    }
    if all || suite == Suite::FourthMomentMatrix {
        fourth_moment_suite(&mut report, seed, opts)?;
    }
    if all || suite == Suite::Haar {
        haar_suite(&mut report, seed, opts)?;
    }
    if all || suite == Suite::MixtureCdf {
        mixture_suite(&mut report, seed, opts)?;
    }
    Ok(report)
}

/// Running sums of per-draw statistics.
#[derive(Debug, Clone)]
pub struct McAccumulator {
    pub count: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl McAccumulator {
    pub fn new(k: usize) -> Self {
        Self { count: 0, sum: vec![0.0; k], sum_sq: vec![0.0; k] }
    }

    pub fn push(&mut self, values: &[f64]) {
        self.count += 1;
        for ((s, q), v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(values) {
            *s += v;
            *q += v * v;
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        self
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.sum[i] / self.count as f64
    }

    /// Standard error of `mean(i)`.
    pub fn se(&self, i: usize) -> f64 {
        let n = self.count as f64;
        let m = self.mean(i);
        ((self.sum_sq[i] / n - m * m).max(0.0) / n).sqrt()
    }
}

const CHUNK: usize = 50_000;

/// Accumulates `k` statistics over `draws` matrices produced in seeded chunks.
/// Chunks run in parallel and are merged in order.
pub fn monte_carlo(
    draws: usize,
    seed: u64,
    tag: u64,
    k: usize,
    generate: impl Fn(usize, u64) -> Result<Vec<DenseMatrix>> + Sync,
    stat: impl Fn(&DenseMatrix, &mut [f64]) + Sync,
) -> Result<McAccumulator> {
    let chunks = draws.div_ceil(CHUNK);
    let parts: Vec<Result<McAccumulator>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(draws - c * CHUNK);
            let mut acc = McAccumulator::new(k);
            let mut buf = vec![0.0; k];
            for z in generate(len, split_seed(seed, tag, c as u64))? {
                stat(&z, &mut buf);
                acc.push(&buf);
            }
            Ok(acc)
        })
        .collect();
    let mut total = McAccumulator::new(k);
    for p in parts {
        total = total.merge(&p?);
    }
    Ok(total)
}

fn normal_draws(p1: usize, p2: usize) -> impl Fn(usize, u64) -> Result<Vec<DenseMatrix>> + Sync {
    move |n, s| Ok(sample_matrix_normal(n, p1, p2, s)?.into_matrices())
}

fn t_draws(p1: usize, p2: usize, nu: f64) -> impl Fn(usize, u64) -> Result<Vec<DenseMatrix>> + Sync {
    move |n, s| Ok(sample_matrix_t(n, p1, p2, nu, s)?.into_matrices())
}

fn unit_law_draws(p1: usize, p2: usize) -> impl Fn(usize, u64) -> Result<Vec<DenseMatrix>> + Sync {
    move |n, s| Ok(sample_spherical(n, p1, p2, &ConstantLaw { value: 1.0 }, s)?.into_matrices())
}

/// Per draw: `z11^4 - 3 z11^2 z12^2`, `z11^2 z12^2 - z11^2 z21^2`,
/// `2 z11 z12 z21 z22 - z11^2 z12^2 + z11^2 z22^2`.
fn relation_stats(z: &DenseMatrix, out: &mut [f64]) {
    let (a, b, c, d) = (z[(0, 0)], z[(0, 1)], z[(1, 0)], z[(1, 1)]);
    out[0] = a.powi(4) - 3.0 * a * a * b * b;
    out[1] = a * a * b * b - a * a * c * c;
    out[2] = 2.0 * a * b * c * d - a * a * b * b + a * a * d * d;
}

type DrawGenerator = Box<dyn Fn(usize, u64) -> Result<Vec<DenseMatrix>> + Sync>;

fn moments_suite(report: &mut VerificationReport, seed: u64, opts: &VerifyOptions) -> Result<()> {
    let s = Suite::Moments;
    let cores: [(&str, u64, DrawGenerator); 2] = [
        ("gaussian", 1, Box::new(normal_draws(3, 3))),
        ("matrix-t(7)", 2, Box::new(t_draws(3, 3, 7.0))),
    ];
    for (name, tag, gen) in cores {
        let acc = monte_carlo(opts.draws, seed, tag, 3, gen, relation_stats)?;
        for (i, rel) in ["m1 = 3 m2", "m2 = m3", "2 m5 = m2 - m4"].iter().enumerate() {
            // Reported in standard errors; passes within 3.
            report.push(s, format!("{name}: {rel} (in MC standard errors)"), acc.mean(i).abs() / acc.se(i), 3.0);
        }
    }

    let acc = monte_carlo(opts.draws, seed, 3, 1, normal_draws(2, 2), |z, out| {
        out[0] = z.norm_squared().powi(2) / 4.0;
    })?;
    report.push(s, "gaussian (2,2): E||Z||^4 / (p1 p2) = 6, relative", (acc.mean(0) - 6.0).abs() / 6.0, 0.01);

    // Singular-value formulas against direct entry moments at (3, 2).
    let coef_l4 = moments_from_singular_law(&SingularLaw { e_l4: 1.0, e_l2l2: 0.0, e_l2: 0.0 }, 3, 2);
    let coef_l22 = moments_from_singular_law(&SingularLaw { e_l4: 0.0, e_l2l2: 1.0, e_l2: 0.0 }, 3, 2);
    let diff_stats = |z: &DenseMatrix, out: &mut [f64]| {
        let sv = z.singular_values();
        let law = SingularLaw::from_draws([sv.as_slice()]);
        let (a, b, d) = (z[(0, 0)], z[(0, 1)], z[(1, 1)]);
        out[0] = a * a * b * b - (coef_l4.m2 * law.e_l4 + coef_l22.m2 * law.e_l2l2);
        out[1] = a * a * d * d - (coef_l4.m4 * law.e_l4 + coef_l22.m4 * law.e_l2l2);
    };
    let acc = monte_carlo(opts.draws, seed, 4, 2, t_draws(3, 2, 7.0), diff_stats)?;
    report.push(s, "matrix-t(7) (3,2): m2 from singular values (in SE)", acc.mean(0).abs() / acc.se(0), 3.0);
    report.push(s, "matrix-t(7) (3,2): m4 from singular values (in SE)", acc.mean(1).abs() / acc.se(1), 3.0);

    let unit = moments_from_singular_law(&SingularLaw::unit(), 3, 2);
    let acc = monte_carlo(opts.draws, seed, 5, 2, unit_law_draws(3, 2), |z, out| {
        let (a, b, d) = (z[(0, 0)], z[(0, 1)], z[(1, 1)]);
        out[0] = a * a * b * b;
        out[1] = a * a * d * d;
    })?;
    report.push(s, "unit singular values (3,2): m2 (in SE)", (acc.mean(0) - unit.m2).abs() / acc.se(0), 3.0);
    report.push(s, "unit singular values (3,2): m4 (in SE)", (acc.mean(1) - unit.m4).abs() / acc.se(1), 3.0);
    Ok(())
}

/// `vec Z (x) vec Z` outer products, flattened.
fn fourth_moment_stats(z: &DenseMatrix, out: &mut [f64]) {
    let v = kron::vec(z);
    let w: Vec<f64> = v.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
    // Kronecker order: (vec Z (x) vec Z)[i * p + j] = v_i v_j.
    let k = w.len();
    for i in 0..k {
        for j in 0..k {
            out[i * k + j] = w[i] * w[j];
        }
    }
}

fn empirical_fourth_moment(acc: &McAccumulator, k: usize) -> DenseMatrix {
    DenseMatrix::from_fn(k, k, |i, j| acc.mean(i * k + j))
}

fn fourth_moment_suite(report: &mut VerificationReport, seed: u64, opts: &VerifyOptions) -> Result<()> {
    let s = Suite::FourthMomentMatrix;
    let k = 16;
    let acc = monte_carlo(opts.draws, seed, 11, k * k, normal_draws(2, 2), fourth_moment_stats)?;
    let theory = fourth_moment_matrix(&SphericalMoments::gaussian(), 2, 2);
    report.push(s, "gaussian core (2,2), max entry error", (empirical_fourth_moment(&acc, k) - theory).amax(), 0.01);

    let acc = monte_carlo(opts.draws, seed, 12, k * k, unit_law_draws(2, 2), fourth_moment_stats)?;
    let theory = fourth_moment_matrix(&moments_from_singular_law(&SingularLaw::unit(), 2, 2), 2, 2);
    report.push(s, "unit singular values (2,2), max entry error", (empirical_fourth_moment(&acc, k) - theory).amax(), 0.01);
    Ok(())
}

fn haar_suite(report: &mut VerificationReport, seed: u64, opts: &VerifyOptions) -> Result<()> {
    for p in [2usize, 3, 4] {
        let acc = monte_carlo(opts.draws, seed, 20 + p as u64, 4, |n, s| sample_haar_frames(n, p, p, s), |u, out| {
            let (a, b, c, d) = (u[(0, 0)], u[(0, 1)], u[(1, 0)], u[(1, 1)]);
            out[0] = a.powi(4);
            out[1] = a * a * b * b;
            out[2] = a * a * c * c;
            out[3] = a * a * d * d;
        })?;
        let h = haar_moments(p);
        let theory = [h.u11_4, h.u11_u12, h.u11_u21, h.u11_u22];
        let err = (0..4).map(|i| (acc.mean(i) - theory[i]).abs()).fold(0.0, f64::max);
        report.push(Suite::Haar, format!("p1 = {p}: entry fourth moments, max error"), err, 0.003);
    }
    Ok(())
}

/// The `t` with `mixture_sf(t) = prob`, by bisection.
pub fn mixture_quantile(spec: &MixtureSpec, prob: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, spec.mean().max(1.0));
    while mixture_sf(hi, spec, DEFAULT_QUADRATURE_TOL)? > prob {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mixture_sf(mid, spec, DEFAULT_QUADRATURE_TOL)? > prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fraction of `draws` simulated mixture values above `t`.
pub fn simulate_mixture_tail(spec: &MixtureSpec, t: f64, draws: usize, seed: u64) -> f64 {
    let dists: Vec<(f64, ChiSquared<f64>)> = spec
        .components()
        .iter()
        .map(|&(a, d)| (a, ChiSquared::new(d as f64).expect("df is positive")))
        .collect();
    let chunks = draws.div_ceil(CHUNK * 10);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = (CHUNK * 10).min(draws - c * CHUNK * 10);
            let mut rng = SimRng::seed_from_u64(split_seed(seed, 31, c as u64));
            (0..len)
                .filter(|_| dists.iter().map(|(a, d)| a * d.sample(&mut rng)).sum::<f64>() > t)
                .count()
        })
        .sum();
    hits as f64 / draws as f64
}

fn mixture_suite(report: &mut VerificationReport, seed: u64, opts: &VerifyOptions) -> Result<()> {
    let s = Suite::MixtureCdf;
    let spec = MixtureSpec::new([(1.5, 25), (2.5, 9)])?;
    let t = mixture_quantile(&spec, 0.05)?;
    let mc = simulate_mixture_tail(&spec, t, opts.mixture_draws, seed);
    report.push(s, format!("1.5 chi2(25) + 2.5 chi2(9) at t = {t:.3}"), (mc - 0.05).abs(), 0.001);

    let pooled = MixtureSpec::new([(2.0, 25), (2.0, 9)])?;
    let mut err: f64 = 0.0;
    for x in tail_grid(34) {
        err = err.max((mixture_sf(2.0 * x, &pooled, DEFAULT_QUADRATURE_TOL)? - chi2_sf(x, 34)).abs());
    }
    report.push(s, "2 chi2(25) + 2 chi2(9) = 2 chi2(34)", err, 1e-8);
    Ok(())
}

/// Points whose `chi2_df` tail probabilities span `1e-6 ..= 1 - 1e-6`.
pub fn tail_grid(df: usize) -> Vec<f64> {
    let quantile = |p: f64| {
        let (mut lo, mut hi) = (0.0, 20.0 * df as f64 + 200.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if chi2_sf(mid, df) > p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let probs = [1.0 - 1e-6, 0.999, 0.99, 0.9, 0.75, 0.5, 0.25, 0.1, 0.05, 0.01, 1e-3, 1e-4, 1e-5, 1e-6];
    probs.iter().map(|&p| quantile(p)).collect()
}
