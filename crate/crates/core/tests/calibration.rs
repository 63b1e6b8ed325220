use rayon::ThreadPoolBuilder;

use separ_core::samplers::{local_alternative, sample_matrix_normal, sample_matrix_t, split_seed};
use separ_core::{run_simulation, run_tests, Method, Nu, SimulationConfig, TestConfig};

/// Kolmogorov-Smirnov distance of the sample to Uniform(0, 1).
fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

/// At n = 800 the norm statistic still carries an O(1/n) upward bias visible to a KS test.
#[test]
fn null_p_values_are_uniform() {
    let reps = 500;
    let config = TestConfig::default();
    let mut p = vec![Vec::new(); 3];
    for r in 0..reps {
        let sample = sample_matrix_normal(3200, 3, 3, split_seed(11, 0, r)).unwrap();
        for (i, report) in run_tests(&sample, &Method::ALL, &config).unwrap().into_iter().enumerate() {
            p[i].push(report.p_value);
        }
    }
    // 1% critical value of the one-sample KS statistic.
    let crit = 1.63 / (reps as f64).sqrt();
    for (method, p) in Method::ALL.iter().zip(p) {
        let d = ks_uniform(p);
        assert!(d < crit, "{method}: KS distance {d:.4} >= {crit:.4}");
    }
}

#[test]
fn transpose_gives_the_same_statistics() {
    let config = TestConfig::default();
    for seed in 0..5 {
        let sample = local_alternative(&sample_matrix_t(400, 3, 2, 8.0, seed).unwrap(), 3.0);
        let a = run_tests(&sample, &Method::ALL, &config).unwrap();
        let b = run_tests(&sample.transposed(), &Method::ALL, &config).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let rel = (x.statistic - y.statistic).abs() / x.statistic.abs().max(1e-300);
            assert!(rel < 1e-8, "{}: {} vs {}", x.method, x.statistic, y.statistic);
            assert!((x.p_value - y.p_value).abs() < 1e-7);
        }
    }
}

fn small_grid(taus: Vec<f64>) -> SimulationConfig {
    SimulationConfig {
        dims: vec![(3, 3)],
        sample_sizes: vec![400],
        nus: vec![Nu::GAUSSIAN, Nu(7.0)],
        taus,
        replicates: 300,
        level: 0.05,
        methods: Method::ALL.to_vec(),
        master_seed: 99,
    }
}

#[test]
fn power_grows_with_tau() {
    let taus = vec![0.0, 4.0, 8.0, 12.0];
    let table = run_simulation(&small_grid(taus.clone())).unwrap();
    for nu in [Nu::GAUSSIAN, Nu(7.0)] {
        for method in [Method::Norm, Method::Wald] {
            let rates: Vec<f64> =
                taus.iter().map(|&t| table.find(3, 3, nu, 400, t, method).unwrap().rate).collect();
            assert!(rates.windows(2).all(|w| w[1] > w[0]), "{method} at nu {nu}: {rates:?}");
        }
    }
}

#[test]
fn simulation_is_reproducible_and_thread_independent() {
    let config = small_grid(vec![0.0, 6.0]);
    let config = SimulationConfig { replicates: 60, ..config };
    let default = run_simulation(&config).unwrap().to_csv_string();
    let single = ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_simulation(&config).unwrap().to_csv_string());
    assert_eq!(default, single);
    assert_eq!(default, run_simulation(&config).unwrap().to_csv_string());

    let table = run_simulation(&config).unwrap();
    for row in &table.rows {
        assert!((0.0..=1.0).contains(&row.rate));
        assert_eq!(row.replicates + row.failures, config.replicates);
    }
}
