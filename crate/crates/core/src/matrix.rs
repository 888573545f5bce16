//! Dense row-major `f32` matrices.

use crate::error::{Error, Result};

/// A dense row-major matrix of 32-bit floats.
///
/// Weights are `N x K` (outputs x reduction), activations `M x K`, and
/// matmul outputs `M x N`. Checked constructors reject empty shapes and
/// non-finite data.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    /// Builds a matrix from rows of equal length.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "ragged rows: expected {cols} columns, found {}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Wraps computed data without the finiteness scan. Shape is still checked.
    pub(crate) fn from_computed(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "computed matrix has wrong length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            Some((index, &value)) => Err(Error::NonFinite { index, value }),
            None => Ok(()),
        }
    }

    /// Dense `self · otherᵀ` with ascending-k `f32` accumulation.
    ///
    /// `self` is `M x K`, `other` is `N x K`, the result is `M x N`.
    pub fn matmul_transposed(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "inner dimensions differ: {} vs {}",
                self.cols, other.cols
            )));
        }
        let mut out = Vec::with_capacity(self.rows * other.rows);
        for x in self.row_iter() {
            for w in other.row_iter() {
                let mut acc = 0.0f32;
                for (a, b) in x.iter().zip(w) {
                    acc += a * b;
                }
                out.push(acc);
            }
        }
        Ok(Matrix::from_computed(self.rows, other.rows, out))
    }

    /// Returns a copy with rows reordered so that row `i` of the result is
    /// row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Matrix> {
        if perm.len() != self.rows {
            return Err(Error::ShapeMismatch("permutation length".into()));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Ok(Matrix::from_computed(self.rows, self.cols, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = Matrix::new(1, 3, vec![0.0, f32::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
        let err = Matrix::new(1, 1, vec![f32::INFINITY]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 0, .. }));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(Matrix::new(0, 3, vec![]), Err(Error::EmptyMatrix { .. })));
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(Error::LengthMismatch { len: 3, .. })
        ));
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn matmul_small() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let w = Matrix::from_rows(&[[3.0, 4.0], [5.0, 6.0], [0.0, 1.0]]).unwrap();
        let y = x.matmul_transposed(&w).unwrap();
        assert_eq!(y.shape(), (1, 3));
        assert_eq!(y.data(), &[11.0, 17.0, 2.0]);
    }
}
