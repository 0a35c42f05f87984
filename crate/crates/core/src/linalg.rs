//! Complex linear algebra on [`ComplexMat`]: SVD, eigendecomposition and
//! PSD projection. Factorizations are delegated to `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::{ComplexMat, ComplexVec};

const SVD_MAX_ITER: usize = 10_000;

pub(crate) fn to_na(m: &ComplexMat) -> DMatrix<Complex64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// Thin SVD result: `M = U diag(sigma) V^H`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: ComplexMat,
    pub sigma: Vec<f64>,
    pub v: ComplexMat,
}

/// Thin singular value decomposition with singular values sorted descending.
pub fn complex_svd(m: &ComplexMat) -> Result<Svd> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::Shape("SVD of an empty matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::Numerical("SVD input contains non-finite entries".into()));
    }
    let svd = to_na(m)
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^H");
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = ComplexMat::from_fn(u.nrows(), k, |i, j| u[(i, order[j])]);
    let v = ComplexMat::from_fn(v_t.ncols(), k, |i, j| v_t[(order[j], i)].conj());
    Ok(Svd { u, sigma, v })
}

/// Eigenvalues and unit-norm eigenvectors (as columns) of a square matrix.
pub fn complex_eig(m: &ComplexMat) -> Result<(ComplexVec, ComplexMat)> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::Shape("eigendecomposition needs a square matrix".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), ComplexMat::zeros(0, 0)));
    }
    let schur = nalgebra::Schur::try_new(to_na(m), f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    let (q, t) = schur.unpack();
    let eigvals: ComplexVec = (0..n).map(|i| t[(i, i)]).collect();
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let mut vecs = ComplexMat::zeros(n, n);
    for k in 0..n {
        // Back-substitution for (T - t_kk I) x = 0 with x_k = 1.
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        x[k] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let s: Complex64 = ((i + 1)..=k).map(|j| t[(i, j)] * x[j]).sum();
            let mut d = t[(i, i)] - t[(k, k)];
            if d.norm() < f64::EPSILON * scale {
                d = Complex64::new(f64::EPSILON * scale, 0.0);
            }
            x[i] = -s / d;
        }
        let mut v: ComplexVec = (0..n).map(|i| (0..n).map(|j| q[(i, j)] * x[j]).sum()).collect();
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|z| *z /= norm);
        for i in 0..n {
            vecs[(i, k)] = v[i];
        }
    }
    Ok((eigvals, vecs))
}

/// Projects onto the Hermitian PSD cone: symmetrize, then clamp negative
/// eigenvalues to zero.
pub fn hermitian_psd_project(m: &ComplexMat) -> Result<ComplexMat> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::Shape("PSD projection needs a square matrix".into()));
    }
    let sym = ComplexMat::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
    let eig = SymmetricEigen::new(to_na(&sym));
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(sym);
    }
    let v = &eig.eigenvectors;
    Ok(ComplexMat::from_fn(n, n, |i, j| {
        (0..n)
            .map(|k| v[(i, k)] * v[(j, k)].conj() * eig.eigenvalues[k].max(0.0))
            .sum()
    }))
}

/// Real symmetric counterpart of [`hermitian_psd_project`], used on
/// real-lifted covariances. Returns the input symmetrized when it is
/// already PSD.
pub fn symmetric_psd_project(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    let sym = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (m[[i, j]] + m[[j, i]]));
    let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| sym[[i, j]]));
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let v = &eig.eigenvectors;
    Array2::from_shape_fn((n, n), |(i, j)| {
        (0..n)
            .map(|k| v[(i, k)] * v[(j, k)] * eig.eigenvalues[k].max(0.0))
            .sum()
    })
}

/// Smallest eigenvalue of a Hermitian matrix (after symmetrization).
pub fn min_hermitian_eigenvalue(m: &ComplexMat) -> f64 {
    let n = m.rows();
    let sym = ComplexMat::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
    SymmetricEigen::new(to_na(&sym))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]])))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Complex covariance `E[(z - mu)(z - mu)^H]` from a real-lifted covariance
/// whose coordinates interleave `(re, im)` per complex entry.
pub fn complex_cov_from_lift(c: &Array2<f64>) -> ComplexMat {
    let r = c.nrows() / 2;
    ComplexMat::from_fn(r, r, |i, j| {
        let (xi, yi, xj, yj) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        Complex64::new(
            c[[xi, xj]] + c[[yi, yj]],
            c[[yi, xj]] - c[[xi, yj]],
        )
    })
}

/// Real lift of a circularly-symmetric complex covariance.
pub fn lift_from_complex_cov(s: &ComplexMat) -> Array2<f64> {
    let r = s.rows();
    let mut c = Array2::zeros((2 * r, 2 * r));
    for i in 0..r {
        for j in 0..r {
            let z = s[(i, j)];
            c[[2 * i, 2 * j]] = 0.5 * z.re;
            c[[2 * i + 1, 2 * j + 1]] = 0.5 * z.re;
            c[[2 * i + 1, 2 * j]] = 0.5 * z.im;
            c[[2 * i, 2 * j + 1]] = -0.5 * z.im;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_mat(rows: usize, cols: usize, seed: u64) -> ComplexMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexMat::from_fn(rows, cols, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn reconstruct(s: &Svd) -> ComplexMat {
        let mut us = s.u.clone();
        for i in 0..us.rows() {
            for j in 0..us.cols() {
                us[(i, j)] *= s.sigma[j];
            }
        }
        us.matmul(&s.v.conj_transpose()).unwrap()
    }

    #[test]
    fn svd_identity() {
        let s = complex_svd(&ComplexMat::identity(3)).unwrap();
        for v in &s.sigma {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn svd_rank_one() {
        let a = [c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 1.0)];
        let b = [c(2.0, -1.0), c(0.3, 0.4)];
        let m = ComplexMat::from_fn(3, 2, |i, j| a[i] * b[j].conj());
        let s = complex_svd(&m).unwrap();
        let na = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let nb = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((s.sigma[0] - na * nb).abs() < 1e-12);
        assert!(s.sigma[1].abs() < 1e-12);
    }

    #[test]
    fn svd_random_reconstruction_and_orthonormality() {
        let m = random_mat(8, 6, 11);
        let s = complex_svd(&m).unwrap();
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        let rec = reconstruct(&s);
        let mut diff = 0.0;
        for i in 0..8 {
            for j in 0..6 {
                diff += (rec[(i, j)] - m[(i, j)]).norm_sqr();
            }
        }
        assert!(diff.sqrt() < 1e-9 * m.frobenius_norm());
        for q in [&s.u, &s.v] {
            let g = q.conj_transpose().matmul(q).unwrap();
            for i in 0..g.rows() {
                for j in 0..g.cols() {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((g[(i, j)] - c(e, 0.0)).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut m = ComplexMat::identity(2);
        m[(0, 1)] = c(f64::NAN, 0.0);
        assert!(complex_svd(&m).is_err());
    }

    #[test]
    fn eig_recovers_diagonalizable_spectrum() {
        let m = random_mat(5, 5, 3);
        let (vals, vecs) = complex_eig(&m).unwrap();
        for k in 0..5 {
            let v = vecs.col(k);
            let mv = m.mul_vec(&v).unwrap();
            let res: f64 = mv
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - vals[k] * b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(res < 1e-10, "residual {res}");
        }
    }

    #[test]
    fn psd_projection_keeps_psd_input() {
        let a = random_mat(4, 4, 5);
        let psd = a.matmul(&a.conj_transpose()).unwrap();
        let p = hermitian_psd_project(&psd).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((p[(i, j)] - psd[(i, j)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn psd_projection_clamps_negative_eigenvalue() {
        let mut m = ComplexMat::zeros(2, 2);
        m[(0, 0)] = c(1.0, 0.0);
        m[(1, 1)] = c(-1e-8, 0.0);
        let p = hermitian_psd_project(&m).unwrap();
        assert!((p[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        assert!(p[(1, 1)].norm() < 1e-15);
        assert!(p[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn psd_projection_random_indefinite() {
        // Hermitian with eigenvalues (2, 1, 0.5, -0.7) in a random unitary basis.
        let q = complex_svd(&random_mat(4, 4, 9)).unwrap().u;
        let d = [2.0, 1.0, 0.5, -0.7];
        let m = ComplexMat::from_fn(4, 4, |i, j| {
            (0..4).map(|k| q[(i, k)] * q[(j, k)].conj() * d[k]).sum()
        });
        assert!(min_hermitian_eigenvalue(&m) < -0.69);
        let p = hermitian_psd_project(&m).unwrap();
        assert!(p.is_hermitian(1e-12));
        assert!(min_hermitian_eigenvalue(&p) >= -1e-12);
    }

    #[test]
    fn complex_lift_round_trip() {
        let a = random_mat(3, 3, 21);
        let s = a.matmul(&a.conj_transpose()).unwrap();
        let back = complex_cov_from_lift(&lift_from_complex_cov(&s));
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[(i, j)] - s[(i, j)]).norm() < 1e-14);
            }
        }
    }
}
