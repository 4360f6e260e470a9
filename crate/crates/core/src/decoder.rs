use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};

/// A linear decoder: one row of logit weights per vocabulary token, so logits
/// for a context with embedding `h` are `W h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub(crate) mat: DMatrix<f64>,
}

impl Decoder {
    pub fn zeros(vocab: usize, dim: usize) -> Self {
        Decoder {
            mat: DMatrix::zeros(vocab, dim),
        }
    }

    /// Wraps a V x d matrix, rejecting non-finite entries.
    pub fn from_matrix(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.iter().all(|x| x.is_finite()) {
            return Err(CoreError::NonFinite { iter: 0 });
        }
        Ok(Decoder { mat })
    }

    pub(crate) fn from_matrix_unchecked(mat: DMatrix<f64>) -> Self {
        Decoder { mat }
    }

    /// Builds from row-major rows (one per token).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(CoreError::DimensionMismatch {
                expected: "non-empty rows".into(),
                actual: "empty".into(),
            });
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(CoreError::DimensionMismatch {
                expected: format!("rows of length {dim}"),
                actual: "ragged rows".into(),
            });
        }
        let mat = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        Self::from_matrix(mat)
    }

    pub fn vocab_size(&self) -> usize {
        self.mat.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.mat.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn logits(&self, h: &DVector<f64>) -> DVector<f64> {
        &self.mat * h
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.mat.norm()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Decoder) -> f64 {
        self.mat.dot(&other.mat)
    }

    pub fn is_zero(&self) -> bool {
        self.mat.iter().all(|&x| x == 0.0)
    }

    pub fn scaled(&self, s: f64) -> Decoder {
        Decoder {
            mat: &self.mat * s,
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Decoder, s: f64) -> Decoder {
        Decoder {
            mat: &self.mat + &other.mat * s,
        }
    }

    pub fn sub(&self, other: &Decoder) -> Decoder {
        Decoder {
            mat: &self.mat - &other.mat,
        }
    }

    /// Row-major dump for serialization.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.mat.nrows())
            .map(|i| self.mat.row(i).iter().copied().collect())
            .collect()
    }
}
