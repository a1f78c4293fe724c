use std::ops::{Index, IndexMut};

use super::{DenseVector, NumError};

/// Dense row-major matrix of `f64` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Construct from rows of equal length; rejects ragged or non-finite data.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(NumError::DimensionMismatch(format!(
                    "ragged rows: expected {n_cols} columns, got {}",
                    row.len()
                )));
            }
            for (index, &value) in row.iter().enumerate() {
                if !value.is_finite() {
                    return Err(NumError::NonFinite { index, value });
                }
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: n_rows,
            cols: n_cols,
            data,
        })
    }

    pub fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul inner dimensions must agree ({}x{} * {}x{})",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> DenseVector {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            out[i] = self
                .row(i)
                .iter()
                .zip(x.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        DenseVector::from_raw(out)
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a + b)
            .collect();
        Self::from_raw(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        Self::from_raw(self.rows, self.cols, data)
    }

    pub fn scaled(&self, coeff: f64) -> DenseMatrix {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|a| a * coeff).collect(),
        )
    }

    /// Max-abs-entry norm; used as the stopping metric for fixed-point loops.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &a| m.max(a.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Rank-one outer product `v vᵀ`.
    pub fn outer(v: &DenseVector) -> DenseMatrix {
        let n = v.len();
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = v[i] * v[j];
            }
        }
        out
    }

    /// Solve `self * x = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &DenseVector) -> Result<DenseVector, NumError> {
        let columns = self.solve_matrix(&DenseMatrix::from_raw(rhs.len(), 1, rhs.as_slice().to_vec()))?;
        Ok(DenseVector::from_raw(columns.data))
    }

    /// Solve `self * X = rhs` column-block by LU with partial pivoting.
    pub fn solve_matrix(&self, rhs: &DenseMatrix) -> Result<DenseMatrix, NumError> {
        if self.rows != self.cols {
            return Err(NumError::DimensionMismatch(format!(
                "solve requires a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        if rhs.rows != self.rows {
            return Err(NumError::DimensionMismatch(format!(
                "solve rhs has {} rows, expected {}",
                rhs.rows, self.rows
            )));
        }
        let n = self.rows;
        let mut lu = self.clone();
        let mut x = rhs.clone();
        // Forward elimination with partial pivoting applied to both sides.
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_val = lu[(col, col)].abs();
            for r in (col + 1)..n {
                let v = lu[(r, col)].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = r;
                }
            }
            if pivot_val == 0.0 || !pivot_val.is_finite() {
                return Err(NumError::SingularMatrix { pivot: col });
            }
            if pivot_row != col {
                for j in 0..n {
                    lu.data.swap(col * n + j, pivot_row * n + j);
                }
                for j in 0..x.cols {
                    x.data.swap(col * x.cols + j, pivot_row * x.cols + j);
                }
            }
            let diag = lu[(col, col)];
            for r in (col + 1)..n {
                let factor = lu[(r, col)] / diag;
                if factor == 0.0 {
                    continue;
                }
                for j in col..n {
                    let v = lu[(col, j)];
                    lu[(r, j)] -= factor * v;
                }
                for j in 0..x.cols {
                    let v = x[(col, j)];
                    x[(r, j)] -= factor * v;
                }
            }
        }
        // Back substitution.
        for col in (0..n).rev() {
            let diag = lu[(col, col)];
            for j in 0..x.cols {
                let mut acc = x[(col, j)];
                for k in (col + 1)..n {
                    acc -= lu[(col, k)] * x[(k, j)];
                }
                x[(col, j)] = acc / diag;
            }
        }
        Ok(x)
    }

    /// Cholesky factor `L` with `L Lᵀ = self`; `None` when not positive definite.
    pub fn cholesky(&self) -> Option<DenseMatrix> {
        if self.rows != self.cols {
            return None;
        }
        let n = self.rows;
        let mut l = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut acc = self[(i, j)];
                for k in 0..j {
                    acc -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if acc <= 0.0 || !acc.is_finite() {
                        return None;
                    }
                    l[(i, i)] = acc.sqrt();
                } else {
                    l[(i, j)] = acc / l[(j, j)];
                }
            }
        }
        Some(l)
    }

    /// Factor a positive semi-definite matrix as `B Bᵀ` (pivoted Cholesky with
    /// zero-pivot handling). Returns an error when a pivot is negative beyond
    /// rounding tolerance, i.e. the matrix is not PSD.
    pub fn psd_factor(&self) -> Result<DenseMatrix, NumError> {
        if self.rows != self.cols {
            return Err(NumError::DimensionMismatch(format!(
                "psd_factor requires a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        let scale = self.max_abs().max(1.0);
        let tol = 1e-12 * scale;
        let mut work = self.clone();
        let mut b = DenseMatrix::zeros(n, n);
        for step in 0..n {
            // Largest remaining diagonal entry is the pivot.
            let mut pivot = step;
            for i in step..n {
                if work[(i, i)] > work[(pivot, pivot)] {
                    pivot = i;
                }
            }
            let d = work[(pivot, pivot)];
            if d < -tol {
                return Err(NumError::NotPositiveSemiDefinite { diagonal: d });
            }
            if d <= tol {
                // Remaining block must be (numerically) zero for PSD.
                for i in step..n {
                    if work[(i, i)] < -tol {
                        return Err(NumError::NotPositiveSemiDefinite {
                            diagonal: work[(i, i)],
                        });
                    }
                }
                break;
            }
            let root = d.sqrt();
            let mut col = vec![0.0; n];
            for i in 0..n {
                col[i] = work[(i, pivot)] / root;
            }
            // Downdate and record the factor column in original coordinates.
            for i in 0..n {
                for j in 0..n {
                    work[(i, j)] -= col[i] * col[j];
                }
            }
            for i in 0..n {
                b[(i, step)] = col[i];
            }
        }
        Ok(b)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.is_symmetric(1e-12 * self.max_abs().max(1.0)) && self.cholesky().is_some()
    }

    pub fn is_positive_semidefinite(&self) -> bool {
        self.is_symmetric(1e-12 * self.max_abs().max(1.0)) && self.psd_factor().is_ok()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Trace of a square matrix.
    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    /// Spectral radius estimate via normalized power squaring (Gelfand's
    /// formula ρ = lim ‖Aᵏ‖^(1/k) with k = 2^steps). Handles complex dominant
    /// eigenvalue pairs, which plain power iteration does not.
    pub fn spectral_radius(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        if self.rows == 0 {
            return 0.0;
        }
        let mut b = self.clone();
        // b == A^(2^k) * exp(-log_scale) throughout.
        let mut log_scale = 0.0_f64;
        let steps = 48;
        for _ in 0..steps {
            let norm = b.max_abs();
            if norm == 0.0 {
                return 0.0;
            }
            if !norm.is_finite() {
                return f64::INFINITY;
            }
            let normalized = b.scaled(1.0 / norm);
            log_scale = 2.0 * (log_scale + norm.ln());
            b = normalized.matmul(&normalized);
        }
        let final_norm = b.max_abs();
        if final_norm == 0.0 {
            return 0.0;
        }
        ((log_scale + final_norm.ln()) / 2f64.powi(steps)).exp()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_recovers_known_solution() {
        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x_true = DenseVector::new(vec![0.5, -1.5]).unwrap();
        let rhs = a.matvec(x_true.as_slice());
        let x = a.solve(&rhs).unwrap();
        assert!(x.sub(&x_true).max_abs() < 1e-14);
    }

    #[test]
    fn solve_flags_singular() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let rhs = DenseVector::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            a.solve(&rhs),
            Err(NumError::SingularMatrix { .. })
        ));
    }

    #[test]
    fn solve_needs_pivoting() {
        // Zero leading diagonal forces a row swap.
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let rhs = DenseVector::new(vec![2.0, 3.0]).unwrap();
        let x = a.solve(&rhs).unwrap();
        assert_eq!(x.as_slice(), &[3.0, 2.0]);
    }

    #[test]
    fn cholesky_detects_definiteness() {
        let pd = DenseMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let l = pd.cholesky().unwrap();
        let diff = l.matmul(&l.transpose()).sub(&pd).max_abs();
        assert!(diff < 1e-14);
        let indef = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(indef.cholesky().is_none());
    }

    #[test]
    fn psd_factor_handles_rank_deficiency() {
        let zero = DenseMatrix::zeros(3, 3);
        let b = zero.psd_factor().unwrap();
        assert_eq!(b.max_abs(), 0.0);

        let v = DenseVector::new(vec![1.0, -2.0, 0.5]).unwrap();
        let rank1 = DenseMatrix::outer(&v);
        let b = rank1.psd_factor().unwrap();
        let diff = b.matmul(&b.transpose()).sub(&rank1).max_abs();
        assert!(diff < 1e-12);

        let neg = DenseMatrix::from_rows(&[vec![-1.0]]).unwrap();
        assert!(matches!(
            neg.psd_factor(),
            Err(NumError::NotPositiveSemiDefinite { .. })
        ));
    }

    #[test]
    fn spectral_radius_diagonal_and_rotation() {
        let d = DenseMatrix::from_rows(&[vec![0.5, 0.0], vec![0.0, -0.9]]).unwrap();
        assert!((d.spectral_radius() - 0.9).abs() < 1e-9);

        // Scaled rotation has a complex eigenvalue pair of modulus 0.8.
        let (s, c) = (0.6_f64, 0.8_f64);
        let r = DenseMatrix::from_rows(&[vec![0.8 * c, -0.8 * s], vec![0.8 * s, 0.8 * c]]).unwrap();
        assert!((r.spectral_radius() - 0.8).abs() < 1e-9);

        assert!((DenseMatrix::identity(3).spectral_radius() - 1.0).abs() < 1e-12);
        assert_eq!(DenseMatrix::zeros(2, 2).spectral_radius(), 0.0);
    }
}
