use std::ops::{Index, IndexMut};

use super::NumError;

/// Dense column vector of `f64` entries.
///
/// [`DenseVector::new`] rejects NaN/Inf so that data entering the system is
/// finite; arithmetic results are allowed to go non-finite (divergence
/// detection elsewhere relies on observing that).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    /// Construct from external data, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self, NumError> {
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(NumError::NonFinite { index, value });
            }
        }
        Ok(Self(values))
    }

    /// Construct from values produced internally; no finiteness check.
    pub fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, &a| m.max(a.abs()))
    }

    /// `self += coeff * other`
    pub fn axpy(&mut self, coeff: f64, other: &DenseVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, &b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += coeff * b;
        }
    }

    pub fn scale(&mut self, coeff: f64) {
        for a in &mut self.0 {
            *a *= coeff;
        }
    }

    pub fn scaled(&self, coeff: f64) -> DenseVector {
        Self(self.0.iter().map(|a| a * coeff).collect())
    }

    pub fn sub(&self, other: &DenseVector) -> DenseVector {
        debug_assert_eq!(self.len(), other.len());
        Self(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_data() {
        let err = DenseVector::new(vec![1.0, f64::NAN]).unwrap_err();
        match err {
            NumError::NonFinite { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(DenseVector::new(vec![0.0, -3.5]).is_ok());
    }

    #[test]
    fn dot_and_norms() {
        let a = DenseVector::new(vec![3.0, 4.0]).unwrap();
        let b = DenseVector::new(vec![1.0, -1.0]).unwrap();
        assert_eq!(a.dot(&b), -1.0);
        assert_eq!(a.norm_sq(), 25.0);
        assert_eq!(a.norm(), 5.0);
        assert_eq!(a.max_abs(), 4.0);
    }

    #[test]
    fn axpy_updates_in_place() {
        let mut a = DenseVector::zeros(2);
        let x = DenseVector::new(vec![1.0, 2.0]).unwrap();
        a.axpy(0.5, &x);
        assert_eq!(a.as_slice(), &[0.5, 1.0]);
    }
}
