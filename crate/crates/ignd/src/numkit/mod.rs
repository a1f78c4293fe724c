//! Dense linear-algebra primitives sized for desk-scale problems, plus the
//! reference solvers the rest of the workspace is verified against: an
//! orthonormal null-space construction, the dense regularized Gauss-Newton
//! solve, and a discounted Riccati fixed point.

mod matrix;
mod rng;
mod vector;

pub use matrix::DenseMatrix;
pub use rng::SeededRng;
pub use vector::DenseVector;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("entry {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("gradient has zero norm; the scaled step is undefined")]
    ZeroGradient,
    #[error("matrix is numerically singular (pivot column {pivot})")]
    SingularMatrix { pivot: usize },
    #[error("inner matrix R + gamma*B'PB is singular")]
    SingularInnerMatrix,
    #[error("matrix is not positive semi-definite (pivot diagonal {diagonal})")]
    NotPositiveSemiDefinite { diagonal: f64 },
    #[error("fixed point did not converge in {max_iter} iterations (residual {residual:e})")]
    NoConvergence { max_iter: usize, residual: f64 },
    #[error("closed loop is not stable (spectral radius {rho})")]
    UnstableClosedLoop { rho: f64 },
    #[error("discount factor must lie in (0, 1], got {0}")]
    BadDiscount(f64),
}

/// Orthonormal basis `Z` (m rows, m-1 columns) of the hyperplane orthogonal
/// to `g`: `Zᵀ g = 0`, `Zᵀ Z = I`.
///
/// Construction: modified Gram-Schmidt (with one re-orthogonalization pass)
/// over the standard basis vectors, excluding the coordinate carrying the
/// largest-magnitude entry of `g`, seeded with `g` itself so every output
/// column is orthogonal to it. Deterministic; errors only on `‖g‖ = 0`.
pub fn null_space_basis(g: &DenseVector) -> Result<DenseMatrix, NumError> {
    let m = g.len();
    if m == 0 {
        return Err(NumError::DimensionMismatch(
            "null_space_basis needs at least one coordinate".into(),
        ));
    }
    let norm = g.norm();
    if norm == 0.0 {
        return Err(NumError::ZeroGradient);
    }
    let mut pivot = 0;
    for i in 1..m {
        if g[i].abs() > g[pivot].abs() {
            pivot = i;
        }
    }
    // `basis[0]` is the unit gradient; columns of Z follow it.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    basis.push(g.as_slice().iter().map(|v| v / norm).collect());
    for i in (0..m).filter(|&i| i != pivot) {
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        // Two MGS sweeps keep orthogonality well below the 1e-12 contract.
        for _ in 0..2 {
            for q in &basis {
                let proj: f64 = v.iter().zip(q.iter()).map(|(a, b)| a * b).sum();
                for (ve, qe) in v.iter_mut().zip(q.iter()) {
                    *ve -= proj * qe;
                }
            }
        }
        let vnorm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        debug_assert!(vnorm > 0.0, "excluded pivot guarantees independence");
        for ve in &mut v {
            *ve /= vnorm;
        }
        basis.push(v);
    }
    let mut z = DenseMatrix::zeros(m, m - 1);
    for (col, v) in basis[1..].iter().enumerate() {
        for row in 0..m {
            z[(row, col)] = v[row];
        }
    }
    Ok(z)
}

/// Dense reference solution of the regularized one-residual Gauss-Newton
/// step: minimize ½(r + gᵀΔw)² + ½‖ZᵀΔw‖² where `Z` spans the complement of
/// `g`. Solves the stationarity system `(g gᵀ + Z Zᵀ) Δw = -g r` directly;
/// the incremental rule is checked against this, never derived from it.
pub fn solve_regularized_gn_oracle(
    residual: f64,
    g: &DenseVector,
) -> Result<DenseVector, NumError> {
    let z = null_space_basis(g)?;
    let zt = z.transpose();
    let system = DenseMatrix::outer(g).add(&z.matmul(&zt));
    let rhs = g.scaled(-residual);
    system.solve(&rhs)
}

/// Converged solution of the discounted Riccati recursion together with the
/// optimal gain.
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    /// Quadratic value coefficient matrix (negative semi-definite under the
    /// reward convention `sᵀQs + aᵀRa` with `Q` NSD, `R` ND).
    pub p: DenseMatrix,
    /// Optimal feedback gain `K*` with `a = K* s`.
    pub k: DenseMatrix,
    pub iterations: usize,
    /// Max-abs recursion residual at the returned `P`.
    pub residual: f64,
}

/// Fixed point of `P ← Q + γAᵀPA − γ²AᵀPB (R + γBᵀPB)⁻¹ BᵀPA` from `P = 0`,
/// stopping when the max-abs update falls to `tol`. The returned gain
/// `K* = −(R + γBᵀPB)⁻¹ γBᵀPA` must close the loop strictly inside the unit
/// circle; that is checked after convergence.
pub fn riccati_fixed_point(
    a: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
    r: &DenseMatrix,
    gamma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution, NumError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(NumError::BadDiscount(gamma));
    }
    let n = a.rows();
    let k_dim = b.cols();
    if a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n {
        return Err(NumError::DimensionMismatch(
            "riccati: A must be n x n, B n x k, Q n x n".into(),
        ));
    }
    if r.rows() != k_dim || r.cols() != k_dim {
        return Err(NumError::DimensionMismatch(
            "riccati: R must be k x k".into(),
        ));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = DenseMatrix::zeros(n, n);
    for iteration in 1..=max_iter {
        let pa = p.matmul(a);
        let pb = p.matmul(b);
        let inner = r.add(&bt.matmul(&pb).scaled(gamma));
        let gain_rhs = bt.matmul(&pa).scaled(gamma); // γ BᵀPA
        let x = inner
            .solve_matrix(&gain_rhs)
            .map_err(|_| NumError::SingularInnerMatrix)?;
        let mut next = q.add(&at.matmul(&pa).scaled(gamma));
        let cross = at.matmul(&pb).scaled(gamma); // γ AᵀPB
        next = next.sub(&cross.matmul(&x));
        // Symmetrize to stop rounding drift from accumulating.
        next = next.add(&next.transpose()).scaled(0.5);
        let residual = next.sub(&p).max_abs();
        if !next.all_finite() {
            return Err(NumError::NoConvergence {
                max_iter: iteration,
                residual: f64::INFINITY,
            });
        }
        p = next;
        if residual <= tol {
            let pa = p.matmul(a);
            let pb = p.matmul(b);
            let inner = r.add(&bt.matmul(&pb).scaled(gamma));
            let x = inner
                .solve_matrix(&bt.matmul(&pa).scaled(gamma))
                .map_err(|_| NumError::SingularInnerMatrix)?;
            let k = x.scaled(-1.0);
            let closed = a.add(&b.matmul(&k));
            let rho = closed.spectral_radius();
            if !(rho < 1.0) {
                return Err(NumError::UnstableClosedLoop { rho });
            }
            return Ok(RiccatiSolution {
                p,
                k,
                iterations: iteration,
                residual,
            });
        }
    }
    // One more evaluation of the recursion to report the final residual.
    let residual = {
        let pa = p.matmul(a);
        let pb = p.matmul(b);
        let inner = r.add(&bt.matmul(&pb).scaled(gamma));
        match inner.solve_matrix(&bt.matmul(&pa).scaled(gamma)) {
            Ok(x) => {
                let next = q
                    .add(&at.matmul(&pa).scaled(gamma))
                    .sub(&at.matmul(&pb).scaled(gamma).matmul(&x));
                next.sub(&p).max_abs()
            }
            Err(_) => f64::INFINITY,
        }
    };
    Err(NumError::NoConvergence { max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_vector(rng: &mut SeededRng, m: usize) -> DenseVector {
        DenseVector::from_raw((0..m).map(|_| rng.uniform(-3.0, 3.0)).collect())
    }

    #[test]
    fn null_space_two_dimensional_example() {
        let g = DenseVector::new(vec![3.0, 4.0]).unwrap();
        let z = null_space_basis(&g).unwrap();
        assert_eq!((z.rows(), z.cols()), (2, 1));
        // Single column is ±(0.8, -0.6).
        let col = [z[(0, 0)], z[(1, 0)]];
        let flip = if col[0] < 0.0 { -1.0 } else { 1.0 };
        assert!((flip * col[0] - 0.8).abs() < 1e-12);
        assert!((flip * col[1] + 0.6).abs() < 1e-12);
    }

    #[test]
    fn null_space_is_orthonormal_and_orthogonal_to_g() {
        let mut rng = SeededRng::new(101);
        for m in 1..=20 {
            for _ in 0..20 {
                let mut g = random_vector(&mut rng, m);
                if g.norm() == 0.0 {
                    g[0] = 1.0;
                }
                let z = null_space_basis(&g).unwrap();
                assert_eq!((z.rows(), z.cols()), (m, m - 1));
                let zt = z.transpose();
                let gram = zt.matmul(&z);
                let eye = DenseMatrix::identity(m - 1);
                assert!(gram.sub(&eye).max_abs() <= 1e-12, "ZᵀZ=I failed at m={m}");
                let ztg = zt.matvec(g.as_slice());
                assert!(
                    ztg.max_abs() <= 1e-12 * g.norm().max(1.0),
                    "Zᵀg=0 failed at m={m}"
                );
            }
        }
    }

    #[test]
    fn null_space_rejects_zero_gradient() {
        let g = DenseVector::zeros(4);
        assert!(matches!(null_space_basis(&g), Err(NumError::ZeroGradient)));
    }

    #[test]
    fn gn_oracle_matches_worked_examples() {
        // residual 2, g = (1, 0): Δw = (-2, 0).
        let g = DenseVector::new(vec![1.0, 0.0]).unwrap();
        let dw = solve_regularized_gn_oracle(2.0, &g).unwrap();
        assert!((dw[0] + 2.0).abs() < 1e-12);
        assert!(dw[1].abs() < 1e-12);

        // residual 1, g = (3, 4): Δw = -g r / ‖g‖² = (-0.12, -0.16).
        let g = DenseVector::new(vec![3.0, 4.0]).unwrap();
        let dw = solve_regularized_gn_oracle(1.0, &g).unwrap();
        assert!((dw[0] + 0.12).abs() < 1e-12);
        assert!((dw[1] + 0.16).abs() < 1e-12);
    }

    #[test]
    fn gn_oracle_satisfies_stationarity() {
        // g (r + gᵀΔw) + Z Zᵀ Δw = 0 at the solution.
        let mut rng = SeededRng::new(202);
        for m in 1..=20 {
            for _ in 0..10 {
                let mut g = random_vector(&mut rng, m);
                if g.norm() < 1e-6 {
                    g[0] = 1.0;
                }
                let r = rng.uniform(-2.0, 2.0);
                let dw = solve_regularized_gn_oracle(r, &g).unwrap();
                let lin = r + g.dot(&dw);
                let mut resid = g.scaled(lin);
                if m > 1 {
                    let z = null_space_basis(&g).unwrap();
                    let zt_dw = z.transpose().matvec(dw.as_slice());
                    resid.axpy(1.0, &z.matvec(zt_dw.as_slice()));
                }
                assert!(resid.max_abs() <= 1e-10, "stationarity failed at m={m}");
            }
        }
    }

    #[test]
    fn gn_oracle_scalar_case() {
        // m = 1: Z is 1x0 and the system reduces to g² Δw = -g r.
        let g = DenseVector::new(vec![4.0]).unwrap();
        let dw = solve_regularized_gn_oracle(2.0, &g).unwrap();
        assert!((dw[0] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn riccati_with_zero_dynamics_returns_q() {
        let a = DenseMatrix::zeros(2, 2);
        let b = DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let q = DenseMatrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, -2.0]]).unwrap();
        let r = DenseMatrix::from_rows(&[vec![-1.0]]).unwrap();
        let sol = riccati_fixed_point(&a, &b, &q, &r, 0.9, 1e-12, 100).unwrap();
        assert!(sol.p.sub(&q).max_abs() < 1e-12);
        assert!(sol.k.max_abs() < 1e-12);
    }

    #[test]
    fn riccati_matches_value_iteration_oracle_scalar() {
        // Frozen by an independent 1e6-step value-iteration run (a=0.9, b=1,
        // q=-1, r=-1, gamma=0.9): p* and k* below, closed loop 0.38894...
        let a = DenseMatrix::from_rows(&[vec![0.9]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let q = DenseMatrix::from_rows(&[vec![-1.0]]).unwrap();
        let r = DenseMatrix::from_rows(&[vec![-1.0]]).unwrap();
        let sol = riccati_fixed_point(&a, &b, &q, &r, 0.9, 1e-14, 100_000).unwrap();
        assert!((sol.p[(0, 0)] - (-1.4599499738607542)).abs() < 1e-9);
        assert!((sol.k[(0, 0)] - (-0.51105552651194874)).abs() < 1e-9);
        assert!(sol.residual <= 1e-13);
        let rho = a.add(&b.matmul(&sol.k)).spectral_radius();
        assert!((rho - 0.38894447348805128).abs() < 1e-6);
    }

    #[test]
    fn riccati_rejects_bad_discount_and_reports_no_convergence() {
        let a = DenseMatrix::from_rows(&[vec![0.9]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let q = DenseMatrix::from_rows(&[vec![-1.0]]).unwrap();
        let r = DenseMatrix::from_rows(&[vec![-1.0]]).unwrap();
        assert!(matches!(
            riccati_fixed_point(&a, &b, &q, &r, 0.0, 1e-12, 10),
            Err(NumError::BadDiscount(_))
        ));
        assert!(matches!(
            riccati_fixed_point(&a, &b, &q, &r, 1.5, 1e-12, 10),
            Err(NumError::BadDiscount(_))
        ));
        assert!(matches!(
            riccati_fixed_point(&a, &b, &q, &r, 0.9, 1e-14, 2),
            Err(NumError::NoConvergence { .. })
        ));
    }

    #[test]
    fn riccati_p_is_negative_semidefinite_by_sampling() {
        let a = DenseMatrix::from_rows(&[vec![0.9, 0.1], vec![0.0, 0.8]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let q = DenseMatrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let r = DenseMatrix::from_rows(&[vec![-1.0]]).unwrap();
        let sol = riccati_fixed_point(&a, &b, &q, &r, 0.9, 1e-12, 100_000).unwrap();
        let mut rng = SeededRng::new(5);
        for _ in 0..200 {
            let x = random_vector(&mut rng, 2);
            let px = sol.p.matvec(x.as_slice());
            assert!(x.dot(&px) <= 1e-10);
        }
        assert!(sol.p.is_symmetric(1e-12));
    }
}
