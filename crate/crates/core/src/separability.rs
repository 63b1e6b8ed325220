//! The squared-norm test, the Wald-type test and the Gaussian likelihood ratio test.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::covariance::{
    comparison_matrix, flip_flop_from_covariance, sample_covariance, ComparisonMatrix, FlipFlopOptions,
    MatrixSample, SeparableFit,
};
use crate::error::{Result, SeparError};
use crate::kron::{self, wald_geometry};
use crate::moments::{moment_estimates, standardize_sample, MomentEstimates};
use crate::null_dist::{chi2_sf, mixture_sf, norm_test_dfs, upsilon_hat, MixtureSpec, DEFAULT_QUADRATURE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Norm,
    Wald,
    Lrt,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Norm, Method::Wald, Method::Lrt];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Norm => "norm",
            Method::Wald => "wald",
            Method::Lrt => "lrt",
        }
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = SeparError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "norm" => Ok(Method::Norm),
            "wald" => Ok(Method::Wald),
            "lrt" => Ok(Method::Lrt),
            other => Err(SeparError::InvalidInput(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestConfig {
    pub levels: Vec<f64>,
    pub flip_flop: FlipFlopOptions,
    pub quadrature_tol: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self { levels: vec![0.01, 0.05, 0.10], flip_flop: FlipFlopOptions::default(), quadrature_tol: DEFAULT_QUADRATURE_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NullLaw {
    Mixture(MixtureSpec),
    ChiSquare { df: usize },
}

impl fmt::Display for NullLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NullLaw::Mixture(spec) => write!(f, "{spec}"),
            NullLaw::ChiSquare { df } => write!(f, "chi2({df})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub t2_truncated: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub method: Method,
    pub statistic: f64,
    pub null_law: NullLaw,
    pub p_value: f64,
    /// `(level, p_value < level)` for every configured level.
    pub reject_at: Vec<(f64, bool)>,
    pub diagnostics: Diagnostics,
}

impl TestReport {
    fn new(method: Method, statistic: f64, null_law: NullLaw, p_value: f64, levels: &[f64], diagnostics: Diagnostics) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        let reject_at = levels.iter().map(|&a| (a, p_value < a)).collect();
        Self { method, statistic, null_law, p_value, reject_at, diagnostics }
    }

    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Quantities shared by all three tests on one sample.
#[derive(Debug, Clone)]
pub struct SeparabilityFit {
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    pub sn: kron::DenseMatrix,
    pub fit: SeparableFit,
    pub comparison: ComparisonMatrix,
    estimates: Option<MomentEstimates>,
}

impl SeparabilityFit {
    pub fn new(sample: &MatrixSample, config: &TestConfig) -> Result<Self> {
        let (n, p1, p2) = (sample.n(), sample.p1(), sample.p2());
        let dim = p1 * p2;
        if n < 2 || n - 1 <= dim {
            return Err(SeparError::SampleTooSmall { n, dim });
        }
        let sn = sample_covariance(sample);
        let fit = flip_flop_from_covariance(&sn, p1, p2, &config.flip_flop)?;
        let comparison = comparison_matrix(&sn, &fit)?;
        Ok(Self { n, p1, p2, sn, fit, comparison, estimates: None })
    }

    /// Moment estimates of the standardized sample; computed once.
    pub fn estimates(&mut self, sample: &MatrixSample) -> Result<MomentEstimates> {
        if let Some(e) = self.estimates {
            return Ok(e);
        }
        let e = moment_estimates(&standardize_sample(sample, &self.fit)?)?;
        self.estimates = Some(e);
        Ok(e)
    }

    /// `t_n = n ||V_n - I||_F^2`.
    pub fn norm_statistic(&self) -> f64 {
        self.n as f64 * self.comparison.squared_distance_to_identity()
    }
}

/// `p(p+1)/2 - p1(p1+1)/2 - p2(p2+1)/2 + 1` with `p = p1 p2`.
pub fn lrt_df(p1: usize, p2: usize) -> usize {
    let p = p1 * p2;
    p * (p + 1) / 2 + 1 - p1 * (p1 + 1) / 2 - p2 * (p2 + 1) / 2
}

fn trivially_separable(method: Method, p1: usize, p2: usize, levels: &[f64]) -> TestReport {
    let diagnostics = Diagnostics {
        warnings: vec![format!("p1 = {p1}, p2 = {p2}: every covariance is separable, test skipped")],
        ..Diagnostics::default()
    };
    let null_law = match method {
        Method::Norm => NullLaw::Mixture(MixtureSpec::new([]).expect("empty spec")),
        _ => NullLaw::ChiSquare { df: 0 },
    };
    TestReport::new(method, 0.0, null_law, 1.0, levels, diagnostics)
}

fn base_diagnostics(fit: &SeparabilityFit) -> Diagnostics {
    Diagnostics { iterations: fit.fit.iterations, ..Diagnostics::default() }
}

fn with_moments(mut d: Diagnostics, e: &MomentEstimates) -> Diagnostics {
    d.t1 = Some(e.t1);
    d.t2 = Some(e.t2);
    d.t2_truncated = e.t2_truncated;
    if e.t2_truncated {
        d.warnings.push("t2 estimate was negative and has been set to 0".into());
    }
    d
}

fn norm_from_fit(sample: &MatrixSample, fit: &mut SeparabilityFit, config: &TestConfig) -> Result<TestReport> {
    let est = fit.estimates(sample)?;
    let (d1, d2) = norm_test_dfs(fit.p1, fit.p2);
    let spec = MixtureSpec::new([(est.t1, d1), (est.t2, d2)])?;
    let statistic = fit.norm_statistic();
    let p_value = mixture_sf(statistic, &spec, config.quadrature_tol)?;
    let diagnostics = with_moments(base_diagnostics(fit), &est);
    Ok(TestReport::new(Method::Norm, statistic, NullLaw::Mixture(spec), p_value, &config.levels, diagnostics))
}

fn wald_from_fit(sample: &MatrixSample, fit: &mut SeparabilityFit, config: &TestConfig) -> Result<TestReport> {
    let est = fit.estimates(sample)?;
    let weight = upsilon_hat(&est, &wald_geometry(fit.p1, fit.p2))?;
    let v = fit.comparison.deviation_vec();
    let statistic = (fit.n as f64 * v.dot(&(&weight.upsilon * &v))).max(0.0);
    let p_value = chi2_sf(statistic, weight.df);
    let mut diagnostics = with_moments(base_diagnostics(fit), &est);
    if !weight.used_g2 {
        diagnostics.warnings.push(format!("second projection dropped, df reduced to {}", weight.df));
    }
    Ok(TestReport::new(Method::Wald, statistic, NullLaw::ChiSquare { df: weight.df }, p_value, &config.levels, diagnostics))
}

fn lrt_from_fit(fit: &SeparabilityFit, config: &TestConfig) -> Result<TestReport> {
    let (p1, p2) = (fit.p1 as f64, fit.p2 as f64);
    // log det(s2 (x) s1) is invariant to moving scale between the factors.
    let separable = p2 * kron::log_det_spd(&fit.fit.s1)? + p1 * kron::log_det_spd(&fit.fit.s2)?;
    let statistic = (fit.n as f64 * (separable - kron::log_det_spd(&fit.sn)?)).max(0.0);
    let df = lrt_df(fit.p1, fit.p2);
    let p_value = chi2_sf(statistic, df);
    Ok(TestReport::new(Method::Lrt, statistic, NullLaw::ChiSquare { df }, p_value, &config.levels, base_diagnostics(fit)))
}

/// Runs several tests on one sample, sharing the covariance fits.
pub fn run_tests(sample: &MatrixSample, methods: &[Method], config: &TestConfig) -> Result<Vec<TestReport>> {
    run_tests_each(sample, methods, config)?.into_iter().collect()
}

/// As [`run_tests`], but a method that fails does not discard the others.
/// The outer error is a failure of the shared fit.
pub fn run_tests_each(
    sample: &MatrixSample,
    methods: &[Method],
    config: &TestConfig,
) -> Result<Vec<Result<TestReport>>> {
    let (p1, p2) = (sample.p1(), sample.p2());
    if p1 == 1 || p2 == 1 {
        return Ok(methods.iter().map(|&m| Ok(trivially_separable(m, p1, p2, &config.levels))).collect());
    }
    let mut fit = SeparabilityFit::new(sample, config)?;
    Ok(methods
        .iter()
        .map(|&m| match m {
            Method::Norm => norm_from_fit(sample, &mut fit, config),
            Method::Wald => wald_from_fit(sample, &mut fit, config),
            Method::Lrt => lrt_from_fit(&fit, config),
        })
        .collect())
}

fn run_one(sample: &MatrixSample, method: Method, config: &TestConfig) -> Result<TestReport> {
    Ok(run_tests(sample, &[method], config)?.remove(0))
}

/// `t_n = n ||V_n - I||^2` against `t1 chi2_{d1} + t2 chi2_{d2}`.
pub fn norm_test(sample: &MatrixSample, config: &TestConfig) -> Result<TestReport> {
    run_one(sample, Method::Norm, config)
}

/// `w_n = n vec(V_n - I)' Upsilon vec(V_n - I)` against a chi-square.
pub fn wald_test(sample: &MatrixSample, config: &TestConfig) -> Result<TestReport> {
    run_one(sample, Method::Wald, config)
}

/// Gaussian likelihood ratio test of a separable against an unstructured covariance.
pub fn lrt_test(sample: &MatrixSample, config: &TestConfig) -> Result<TestReport> {
    run_one(sample, Method::Lrt, config)
}
