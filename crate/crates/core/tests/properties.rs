use nalgebra::DVector;
use proptest::prelude::*;

use separ_core::kron::{commutation_matrix, kron, unvec, vec, wald_geometry, DenseMatrix};
use separ_core::null_dist::{chi2_sf, upsilon_hat, DEFAULT_QUADRATURE_TOL};
use separ_core::samplers::{sample_matrix_t, split_seed};
use separ_core::{mixture_sf, norm_test, norm_test_dfs, wald_df, MixtureSpec, MomentEstimates, TestConfig};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| DenseMatrix::from_vec(rows, cols, v))
}

fn close(a: &DenseMatrix, b: &DenseMatrix, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + a.amax().max(b.amax()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixed_product(a in matrix(2, 3), b in matrix(3, 2), c in matrix(3, 2), d in matrix(2, 3)) {
        let lhs = kron(&a, &b) * kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn vec_of_product(a in matrix(2, 3), x in matrix(3, 4), b in matrix(4, 2)) {
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        prop_assert!((lhs - rhs).amax() <= 1e-10);
    }

    #[test]
    fn commutation_transposes(m in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let a = DenseMatrix::from_fn(m, n, |i, j| ((seed >> ((i * n + j) % 60)) & 0xff) as f64 - 100.0);
        let k = commutation_matrix(m, n);
        prop_assert_eq!(&k * vec(&a), vec(&a.transpose()));
        prop_assert_eq!(&k.transpose() * &k, DenseMatrix::identity(m * n, m * n));
        let back = unvec((&k.transpose() * vec(&a.transpose())).as_slice(), m, n);
        prop_assert_eq!(back, a);
    }

    #[test]
    fn df_identities(p1 in 1usize..9, p2 in 1usize..9) {
        let (d1, d2) = norm_test_dfs(p1, p2);
        prop_assert_eq!(wald_df(p1, p2), d1 + d2);
        prop_assert_eq!(norm_test_dfs(p2, p1), (d1, d2));
        // Together with the p1 + p2 - 1 separable directions they fill the symmetric matrices.
        let p = p1 * p2;
        prop_assert_eq!(d1 + d2 + p1 * (p1 + 1) / 2 + p2 * (p2 + 1) / 2 - 1, p * (p + 1) / 2);
    }

    #[test]
    fn mixture_sf_is_a_monotone_probability(
        comps in prop::collection::vec((0.05..6.0f64, 1usize..60), 1..4),
        a in 0.0..400.0f64,
        b in 0.0..400.0f64,
    ) {
        let spec = MixtureSpec::new(comps).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s_lo = mixture_sf(lo, &spec, DEFAULT_QUADRATURE_TOL).unwrap();
        let s_hi = mixture_sf(hi, &spec, DEFAULT_QUADRATURE_TOL).unwrap();
        prop_assert!((0.0..=1.0).contains(&s_lo) && (0.0..=1.0).contains(&s_hi));
        prop_assert!(s_hi <= s_lo + 2.0 * DEFAULT_QUADRATURE_TOL, "sf({hi}) = {s_hi} > sf({lo}) = {s_lo}");
    }

    #[test]
    fn equal_weights_pool_into_one_chi_square(
        a in 0.05..6.0f64,
        dfs in prop::collection::vec(1usize..60, 1..4),
        x in 0.0..300.0f64,
    ) {
        let spec = MixtureSpec::new(dfs.iter().map(|&d| (a, d))).unwrap();
        let pooled: usize = dfs.iter().sum();
        let t = a * x;
        let got = mixture_sf(t, &spec, DEFAULT_QUADRATURE_TOL).unwrap();
        let want = chi2_sf(x, pooled);
        prop_assert!((got - want).abs() <= DEFAULT_QUADRATURE_TOL, "{got:e} vs {want:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn upsilon_is_psd(t1 in 0.01..20.0f64, t2 in 0.0..20.0f64, dims in prop::sample::select(vec![(2, 2), (2, 3), (3, 3)])) {
        let (p1, p2) = dims;
        let truncated = t2 == 0.0;
        let est = MomentEstimates { d1: 1.0, d2: 3.0, d3: 1.0, t1, t2, t2_truncated: truncated };
        let w = upsilon_hat(&est, &wald_geometry(p1, p2)).unwrap();
        let eig = w.upsilon.clone().symmetric_eigen().eigenvalues;
        let scale = 1.0 / t1.min(if truncated { t1 } else { t2 });
        prop_assert!(eig.min() >= -1e-10 * scale);
        let rank = eig.iter().filter(|&&e| e > 1e-8 * scale).count();
        prop_assert_eq!(rank, w.df);
    }

    #[test]
    fn split_seed_is_a_pure_function(m in any::<u64>(), c in any::<u64>(), r in any::<u64>()) {
        prop_assert_eq!(split_seed(m, c, r), split_seed(m, c, r));
        prop_assert_ne!(split_seed(m, c, r), split_seed(m, c, r.wrapping_add(1)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn norm_statistic_is_affine_invariant(seed in 0u64..1000, entries in prop::collection::vec(-0.6..0.6f64, 13)) {
        let sample = sample_matrix_t(150, 3, 2, 9.0, seed).unwrap();
        let a1 = DenseMatrix::identity(3, 3) + DenseMatrix::from_column_slice(3, 3, &entries[..9]);
        let a2 = DenseMatrix::identity(2, 2) + DenseMatrix::from_column_slice(2, 2, &entries[9..13]);
        prop_assume!(a1.determinant().abs() > 0.05 && a2.determinant().abs() > 0.05);
        let shift = DenseMatrix::from_element(3, 2, 4.0);
        let moved = sample.map(|x| &a1 * x * a2.transpose() + &shift).unwrap();
        let config = TestConfig::default();
        let before = norm_test(&sample, &config).unwrap().statistic;
        let after = norm_test(&moved, &config).unwrap().statistic;
        prop_assert!((before - after).abs() <= 1e-7 * before.abs().max(1.0), "{before} vs {after}");
    }
}

#[test]
fn vec_is_column_major() {
    let a = DenseMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
    assert_eq!(vec(&a), DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
}
