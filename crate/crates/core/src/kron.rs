//! Kronecker-product algebra.
//!
//! Dense constructions of the structural matrices behind both separability
//! tests: commutation matrices, the `P_p`/`Q_p` centering projectors, the
//! `J`/`K` building blocks of the spherical fourth-moment matrix, the
//! linearization coefficients `R1`/`R2`, and the Wald geometry
//! (`B0`, `G1`, `G2` and the two projections `B0 G B0'`).
//!
//! All matrices are `nalgebra::DMatrix<f64>`, which stores entries in
//! column-major order, so `vec` is the raw storage slice.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SeparError};

pub type DenseMatrix = DMatrix<f64>;

/// Column-stacking vectorization.
pub fn vec(a: &DenseMatrix) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`]: reshape a column-major slice into `rows x cols`.
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DenseMatrix {
    assert_eq!(v.len(), rows * cols, "unvec: length does not match shape");
    DMatrix::from_column_slice(rows, cols, v)
}

pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            let mut block = out.view_mut((i * br, j * bc), (br, bc));
            block.zip_apply(b, |o, x| *o = s * x);
        }
    }
    out
}

/// Left fold of [`kron`] over a list of factors.
pub fn kron_chain(factors: &[&DenseMatrix]) -> DenseMatrix {
    let mut iter = factors.iter();
    let first = iter.next().expect("kron_chain needs at least one factor");
    iter.fold((*first).clone(), |acc, f| kron(&acc, f))
}

pub fn identity(n: usize) -> DenseMatrix {
    DMatrix::identity(n, n)
}

/// `vec(I_p)` as a `p^2 x 1` matrix.
pub fn vec_identity(p: usize) -> DenseMatrix {
    let mut v = DMatrix::zeros(p * p, 1);
    for i in 0..p {
        v[(i + i * p, 0)] = 1.0;
    }
    v
}

/// `e_i e_j'` in dimension `p`.
fn unit_outer(p: usize, i: usize, j: usize) -> DenseMatrix {
    let mut e = DMatrix::zeros(p, p);
    e[(i, j)] = 1.0;
    e
}

/// The `mn x mn` permutation `K_{m,n}` with `K_{m,n} vec(A) = vec(A')` for every
/// `m x n` matrix `A`.
pub fn commutation_matrix(m: usize, n: usize) -> DenseMatrix {
    assert!(m >= 1 && n >= 1, "commutation_matrix needs positive dimensions");
    let mut k = DMatrix::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..n {
            // A[i, j] sits at i + j*m in vec(A) and at j + i*n in vec(A').
            k[(j + i * n, i + j * m)] = 1.0;
        }
    }
    k
}

/// `P_p = vec(I_p) vec(I_p)' / p` and its complement `Q_p = I - P_p`.
pub fn centering_projectors(p: usize) -> (DenseMatrix, DenseMatrix) {
    assert!(p >= 1, "centering_projectors needs p >= 1");
    let v = vec_identity(p);
    let proj = &v * v.transpose() / p as f64;
    let comp = identity(p * p) - &proj;
    (proj, comp)
}

/// Building blocks of the fourth-moment matrix, each of side `p1^2 p2^2`.
///
/// `l1 = j1 / p1` and `l2 = j2 / p2` are the projection forms of `j1`, `j2`.
#[derive(Debug, Clone)]
pub struct KronBlocks {
    pub p1: usize,
    pub p2: usize,
    pub j1: DenseMatrix,
    pub j2: DenseMatrix,
    pub k1: DenseMatrix,
    pub k2: DenseMatrix,
    pub l1: DenseMatrix,
    pub l2: DenseMatrix,
}

pub fn building_blocks(p1: usize, p2: usize) -> KronBlocks {
    assert!(p1 >= 1 && p2 >= 1, "building_blocks needs positive dimensions");
    let side = p1 * p1 * p2 * p2;
    let i1 = identity(p1);
    let i2 = identity(p2);

    let mut j1 = DMatrix::zeros(side, side);
    let mut k1 = DMatrix::zeros(side, side);
    for i in 0..p1 {
        for j in 0..p1 {
            let eij = unit_outer(p1, i, j);
            let eji = unit_outer(p1, j, i);
            j1 += kron_chain(&[&i2, &eij, &i2, &eij]);
            k1 += kron_chain(&[&i2, &eij, &i2, &eji]);
        }
    }

    let mut j2 = DMatrix::zeros(side, side);
    let mut k2 = DMatrix::zeros(side, side);
    for i in 0..p2 {
        for j in 0..p2 {
            let eij = unit_outer(p2, i, j);
            let eji = unit_outer(p2, j, i);
            j2 += kron_chain(&[&eij, &i1, &eij, &i1]);
            k2 += kron_chain(&[&eij, &i1, &eji, &i1]);
        }
    }

    let l1 = &j1 / p1 as f64;
    let l2 = &j2 / p2 as f64;
    KronBlocks { p1, p2, j1, j2, k1, k2, l1, l2 }
}

/// `{vec(I_q)' (x) I_{p^2}} (I_q (x) K_{q,p} (x) I_p)`: maps `vec(A) (x) vec(A)` to
/// `vec(A A')` for `p x q` matrices `A`.
pub fn row_contraction(p: usize, q: usize) -> DenseMatrix {
    let left = kron(&vec_identity(q).transpose(), &identity(p * p));
    let mid = kron_chain(&[&identity(q), &commutation_matrix(q, p), &identity(p)]);
    left * mid
}

/// The linearization coefficients `(R1, R2)` of the determinant-normalized
/// flip-flop factors, of shapes `p1^2 x p1^2 p2^2` and `p2^2 x p1^2 p2^2`.
pub fn r_matrices(p1: usize, p2: usize) -> (DenseMatrix, DenseMatrix) {
    assert!(p1 >= 1 && p2 >= 1, "r_matrices needs positive dimensions");
    let (_, q1) = centering_projectors(p1);
    let (_, q2) = centering_projectors(p2);

    let r1 = &q1 * row_contraction(p1, p2) / p2 as f64;

    let k12 = commutation_matrix(p1, p2);
    let r2 = &q2 * row_contraction(p2, p1) * kron(&k12, &k12) / p1 as f64;
    (r1, r2)
}

/// Data-independent matrices of the Wald-type statistic.
///
/// `proj1 = B0 G1 B0'` and `proj2 = B0 G2 B0'` are mutually orthogonal
/// projections with ranks `(p1+2)(p1-1)(p2+2)(p2-1)/4` and
/// `p1 p2 (p1-1)(p2-1)/4`.
#[derive(Debug, Clone)]
pub struct WaldGeometry {
    pub p1: usize,
    pub p2: usize,
    pub b0: DenseMatrix,
    pub g1: DenseMatrix,
    pub g2: DenseMatrix,
    pub proj1: DenseMatrix,
    pub proj2: DenseMatrix,
}

/// Builds the Wald geometry from scratch. Prefer [`wald_geometry`], which caches.
pub fn build_wald_geometry(p1: usize, p2: usize) -> WaldGeometry {
    let side = p1 * p1 * p2 * p2;
    let (r1, r2) = r_matrices(p1, p2);
    let (_, q12) = centering_projectors(p1 * p2);
    let shuffle = kron_chain(&[&identity(p2), &commutation_matrix(p1, p2), &identity(p1)]);
    let stacked = kron(&r2, &vec_identity(p1)) + kron(&vec_identity(p2), &r1);
    let b0 = shuffle * stacked - q12;

    let blocks = building_blocks(p1, p2);
    let eye = identity(side);
    let kk = &blocks.k1 * &blocks.k2;
    let g1 = (&eye + &blocks.k1 + &blocks.k2 + &kk) * 0.25;
    let g2 = (&eye - &blocks.k1 - &blocks.k2 + &kk) * 0.25;

    let b0t = b0.transpose();
    let mut proj1 = &b0 * &g1 * &b0t;
    let mut proj2 = &b0 * &g2 * &b0t;
    symmetrize(&mut proj1);
    symmetrize(&mut proj2);
    WaldGeometry { p1, p2, b0, g1, g2, proj1, proj2 }
}

type GeometryCache = RwLock<HashMap<(usize, usize), Arc<WaldGeometry>>>;

/// Cached [`build_wald_geometry`]; safe to call from many threads.
pub fn wald_geometry(p1: usize, p2: usize) -> Arc<WaldGeometry> {
    static CACHE: OnceLock<GeometryCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(g) = cache.read().expect("geometry cache poisoned").get(&(p1, p2)) {
        return Arc::clone(g);
    }
    let built = Arc::new(build_wald_geometry(p1, p2));
    let mut w = cache.write().expect("geometry cache poisoned");
    Arc::clone(w.entry((p1, p2)).or_insert(built))
}

pub(crate) fn symmetrize(a: &mut DenseMatrix) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

fn checked_eigen(a: &DenseMatrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    assert!(a.is_square(), "symmetric matrix expected");
    let mut s = a.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let tolerance = a.nrows() as f64 * f64::EPSILON * max.abs();
    if !min.is_finite() || min <= tolerance {
        return Err(SeparError::NotPositiveDefinite { min_eigenvalue: min, tolerance });
    }
    Ok(eig)
}

fn spectral_map(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DenseMatrix {
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(f(lambda));
    }
    let mut out = scaled * v.transpose();
    symmetrize(&mut out);
    out
}

/// Symmetric positive definite square root.
pub fn sym_sqrt(a: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(spectral_map(&checked_eigen(a)?, f64::sqrt))
}

/// Symmetric positive definite inverse square root.
pub fn sym_inv_sqrt(a: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(spectral_map(&checked_eigen(a)?, |x| 1.0 / x.sqrt()))
}

/// Log-determinant of an SPD matrix via Cholesky.
pub fn log_det_spd(a: &DenseMatrix) -> Result<f64> {
    let chol = a.clone().cholesky().ok_or_else(|| {
        let eig = SymmetricEigen::new(a.clone());
        SeparError::NotPositiveDefinite { min_eigenvalue: eig.eigenvalues.min(), tolerance: 0.0 }
    })?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}
