//! Rejection-rate simulations over a grid of dimensions, tail indices,
//! sample sizes and local alternatives.
//!
//! Data for replicate `r` of the cell `(p1, p2, nu, n)` is drawn with seed
//! `split_seed(master_seed, cell_key, r)`, where `cell_key` hashes the cell
//! parameters. A cell's results therefore do not depend on the rest of the
//! grid, on the order of evaluation or on the thread count. The same draws
//! are reused for every `tau` and every method.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, SeparError};
use crate::samplers::{local_alternative, split_seed, CoreSpec, ModelSpec};
use crate::separability::{run_tests_each, Method, TestConfig};

/// Tail index of the matrix-t core; `inf` is the Gaussian core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nu(pub f64);

impl Nu {
    pub const GAUSSIAN: Nu = Nu(f64::INFINITY);

    pub fn core(self) -> CoreSpec {
        if self.0.is_infinite() {
            CoreSpec::Gaussian
        } else {
            CoreSpec::MatrixT { nu: self.0 }
        }
    }
}

impl fmt::Display for Nu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for Nu {
    type Err = SeparError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "gaussian" => Ok(Nu::GAUSSIAN),
            other => other
                .parse::<f64>()
                .map(Nu)
                .map_err(|_| SeparError::Config(format!("cannot read nu from '{s}'"))),
        }
    }
}

impl Serialize for Nu {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Nu {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Nu(v as f64)),
            Raw::Float(v) => Ok(Nu(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub dims: Vec<(usize, usize)>,
    pub sample_sizes: Vec<usize>,
    pub nus: Vec<Nu>,
    pub taus: Vec<f64>,
    pub replicates: usize,
    pub level: f64,
    pub methods: Vec<Method>,
    pub master_seed: u64,
}

impl SimulationConfig {
    /// The full grid: both dimensions, four tail indices, six sample sizes, six alternatives.
    pub fn full() -> Self {
        Self {
            dims: vec![(3, 3), (5, 5)],
            sample_sizes: vec![100, 200, 400, 800, 1600, 3200],
            nus: vec![Nu(3.0), Nu(5.0), Nu(7.0), Nu::GAUSSIAN],
            taus: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            replicates: 2000,
            level: 0.05,
            methods: Method::ALL.to_vec(),
            master_seed: 1,
        }
    }

    /// 200 replicates and `n <= 800`.
    pub fn quick(mut self) -> Self {
        self.replicates = self.replicates.min(200);
        self.sample_sizes.retain(|&n| n <= 800);
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SeparError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SeparError::Config(m));
        if self.replicates == 0 {
            return fail("replicates must be at least 1".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return fail(format!("level {} is not in (0, 1)", self.level));
        }
        if self.dims.is_empty() || self.sample_sizes.is_empty() || self.nus.is_empty() || self.taus.is_empty() {
            return fail("dims, sample_sizes, nus and taus must be non-empty".into());
        }
        if self.methods.is_empty() {
            return fail("no methods requested".into());
        }
        if let Some(&(p1, p2)) = self.dims.iter().find(|&&(p1, p2)| p1 == 0 || p2 == 0) {
            return fail(format!("invalid dimensions {p1} x {p2}"));
        }
        let max_p = self.dims.iter().map(|&(p1, p2)| p1 * p2).max().unwrap_or(0);
        if let Some(n) = self.sample_sizes.iter().find(|&&n| n <= max_p + 1) {
            return fail(format!("sample size {n} must exceed p1*p2 + 1 = {}", max_p + 1));
        }
        if let Some(nu) = self.nus.iter().find(|nu| nu.0.is_nan() || nu.0 <= 0.0) {
            return fail(format!("nu = {nu} must be positive"));
        }
        if let Some(t) = self.taus.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return fail(format!("tau = {t} must be a nonnegative number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionRow {
    pub p1: usize,
    pub p2: usize,
    pub nu: Nu,
    pub n: usize,
    pub tau: f64,
    pub method: Method,
    pub rejections: usize,
    /// Replicates that produced a p-value.
    pub replicates: usize,
    pub rate: f64,
    pub failures: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RejectionTable {
    pub rows: Vec<RejectionRow>,
}

pub const CSV_HEADER: [&str; 11] = ["p1", "p2", "nu", "n", "tau", "method", "rejections", "replicates", "rate", "failures", "seed"];

impl RejectionTable {
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| SeparError::Io(std::io::Error::other(e));
        w.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.p1.to_string(),
                r.p2.to_string(),
                r.nu.to_string(),
                r.n.to_string(),
                r.tau.to_string(),
                r.method.to_string(),
                r.rejections.to_string(),
                r.replicates.to_string(),
                format!("{:.6}", r.rate),
                r.failures.to_string(),
                r.seed.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn find(&self, p1: usize, p2: usize, nu: Nu, n: usize, tau: f64, method: Method) -> Option<&RejectionRow> {
        self.rows.iter().find(|r| {
            r.p1 == p1 && r.p2 == p2 && r.nu == nu && r.n == n && r.tau == tau && r.method == method
        })
    }
}

/// Identifies the data-generating cell independently of grid position.
pub fn cell_key(p1: usize, p2: usize, nu: Nu, n: usize) -> u64 {
    let mut key = split_seed(p1 as u64, p2 as u64, n as u64);
    key = split_seed(key, nu.0.to_bits(), 0);
    key
}

/// One cell of the grid: all taus and methods for fixed `(p1, p2, nu, n)`.
#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub p1: usize,
    pub p2: usize,
    pub nu: Nu,
    pub n: usize,
}

/// `counts[tau][method] = (rejections, failures)`.
pub fn run_cell(cell: Cell, config: &SimulationConfig, test_config: &TestConfig) -> Vec<Vec<(usize, usize)>> {
    let key = cell_key(cell.p1, cell.p2, cell.nu, cell.n);
    let model = ModelSpec::standard(cell.p1, cell.p2, cell.nu.core());
    let (nt, nm) = (config.taus.len(), config.methods.len());
    let zero = || vec![vec![(0usize, 0usize); nm]; nt];
    (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let mut out = zero();
            let seed = split_seed(config.master_seed, key, r as u64);
            let base = match model.sample(cell.n, seed) {
                Ok(s) => s,
                Err(e) => {
                    log::debug!("replicate {r} sampling failed: {e}");
                    out.iter_mut().flatten().for_each(|c| c.1 += 1);
                    return out;
                }
            };
            for (ti, &tau) in config.taus.iter().enumerate() {
                let sample = local_alternative(&base, tau);
                match run_tests_each(&sample, &config.methods, test_config) {
                    Ok(results) => {
                        for (mi, res) in results.into_iter().enumerate() {
                            match res {
                                Ok(rep) => out[ti][mi].0 += rep.rejects(config.level) as usize,
                                Err(e) => {
                                    log::debug!("replicate {r} tau {tau}: {e}");
                                    out[ti][mi].1 += 1;
                                }
                            }
                        }
                    }
                    Err(e) => {
                        log::debug!("replicate {r} tau {tau}: {e}");
                        out[ti].iter_mut().for_each(|c| c.1 += 1);
                    }
                }
            }
            out
        })
        .reduce(zero, |mut a, b| {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    x.0 += y.0;
                    x.1 += y.1;
                }
            }
            a
        })
}

pub fn run_simulation(config: &SimulationConfig) -> Result<RejectionTable> {
    config.validate()?;
    let test_config = TestConfig { levels: vec![config.level], ..TestConfig::default() };
    let mut rows = Vec::new();
    for &(p1, p2) in &config.dims {
        for &nu in &config.nus {
            for &n in &config.sample_sizes {
                let cell = Cell { p1, p2, nu, n };
                log::info!("cell p1={p1} p2={p2} nu={nu} n={n}");
                let counts = run_cell(cell, config, &test_config);
                for (ti, &tau) in config.taus.iter().enumerate() {
                    for (mi, &method) in config.methods.iter().enumerate() {
                        let (rejections, failures) = counts[ti][mi];
                        let replicates = config.replicates - failures;
                        let rate = if replicates > 0 { rejections as f64 / replicates as f64 } else { 0.0 };
                        rows.push(RejectionRow {
                            p1,
                            p2,
                            nu,
                            n,
                            tau,
                            method,
                            rejections,
                            replicates,
                            rate,
                            failures,
                            seed: config.master_seed,
                        });
                    }
                }
            }
        }
    }
    Ok(RejectionTable { rows })
}
