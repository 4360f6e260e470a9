//! The span of in-support score-difference directions and its orthogonal
//! complement.
//!
//! Each context contributes the matrices (e_z - e_z') h^T for tokens z, z' in
//! its support. Decoder components inside their span move in-support
//! probability ratios; components orthogonal to it leave every in-support
//! ratio unchanged and only push out-of-support scores around. The basis is
//! an orthonormal set of vectorized matrices from a column-pivoted QR of the
//! anchored spanning set (anchor = smallest support token), stored column
//! major at V*d rows.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::corpus::{ContextTable, TokenId};
use crate::decoder::Decoder;
use crate::error::{CoreError, Result};
use crate::io::{fmt_f64, render_num_array};

/// Column-major flattening, matching the storage order of the matrix.
pub(crate) fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub(crate) fn unvectorize(v: &DVector<f64>, nrows: usize, ncols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(nrows, ncols, v.as_slice())
}

/// vec((e_plus - e_minus) h^T) without materializing the matrix.
pub(crate) fn pair_direction(
    vocab: usize,
    plus: TokenId,
    minus: TokenId,
    h: &DVector<f64>,
) -> DVector<f64> {
    let mut v = DVector::zeros(vocab * h.len());
    for c in 0..h.len() {
        v[c * vocab + (plus - 1) as usize] += h[c];
        v[c * vocab + (minus - 1) as usize] -= h[c];
    }
    v
}

#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    pub vocab: u32,
    pub dim: usize,
    /// Orthonormal columns spanning the in-support difference directions.
    q: DMatrix<f64>,
    /// Threshold below which QR pivots were treated as numerically zero.
    pub drop_tol: f64,
}

fn orthonormal_columns(ambient: usize, cols: &[DVector<f64>]) -> (DMatrix<f64>, f64) {
    if cols.is_empty() {
        return (DMatrix::zeros(ambient, 0), 0.0);
    }
    let m = DMatrix::from_columns(cols);
    let qr = m.col_piv_qr();
    let r = qr.r();
    let scale = if r.nrows() == 0 { 0.0 } else { r[(0, 0)].abs() };
    if scale == 0.0 {
        return (DMatrix::zeros(ambient, 0), 0.0);
    }
    let drop_tol = 1e-10 * scale;
    let rank = (0..r.nrows().min(r.ncols()))
        .take_while(|&i| r[(i, i)].abs() > drop_tol)
        .count();
    let q = qr.q().columns(0, rank).into_owned();
    (q, drop_tol)
}

/// Orthonormal basis of the span of all in-support difference directions.
pub fn build_basis(table: &ContextTable) -> SubspaceBasis {
    let v = table.vocab_size as usize;
    let ambient = v * table.dim;
    let mut cols = Vec::with_capacity(table.num_anchored_pairs());
    for c in &table.contexts {
        let anchor = c.anchor();
        for &z in &c.support[1..] {
            cols.push(pair_direction(v, z, anchor, &c.embedding));
        }
    }
    let (q, drop_tol) = orthonormal_columns(ambient, &cols);
    SubspaceBasis {
        vocab: table.vocab_size,
        dim: table.dim,
        q,
        drop_tol,
    }
}

impl SubspaceBasis {
    pub fn empty(vocab: u32, dim: usize) -> Self {
        SubspaceBasis {
            vocab,
            dim,
            q: DMatrix::zeros(vocab as usize * dim, 0),
            drop_tol: 0.0,
        }
    }

    /// Dimension of the spanned subspace.
    pub fn dim_f(&self) -> usize {
        self.q.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn basis_matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub(crate) fn project_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.dim_f() == 0 {
            DVector::zeros(x.len())
        } else {
            &self.q * self.q.tr_mul(x)
        }
    }

    pub(crate) fn perp_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        x - self.project_vec(x)
    }

    /// Component of the decoder inside the span.
    pub fn project_span(&self, w: &Decoder) -> Decoder {
        let x = vectorize(w.matrix());
        Decoder::from_matrix_unchecked(unvectorize(
            &self.project_vec(&x),
            self.vocab as usize,
            self.dim,
        ))
    }

    /// Component of the decoder orthogonal to the span.
    pub fn project_perp(&self, w: &Decoder) -> Decoder {
        let x = vectorize(w.matrix());
        Decoder::from_matrix_unchecked(unvectorize(
            &self.perp_vec(&x),
            self.vocab as usize,
            self.dim,
        ))
    }

    /// Element of the span with the given basis coordinates.
    pub fn element(&self, coords: &DVector<f64>) -> Decoder {
        assert_eq!(coords.len(), self.dim_f(), "coordinate length");
        let x = if self.dim_f() == 0 {
            DVector::zeros(self.ambient_dim())
        } else {
            &self.q * coords
        };
        Decoder::from_matrix_unchecked(unvectorize(&x, self.vocab as usize, self.dim))
    }

    /// Basis coordinates of the decoder's span component.
    pub fn coords(&self, w: &Decoder) -> DVector<f64> {
        self.q.tr_mul(&vectorize(w.matrix()))
    }

    fn orthonormality_defect(&self) -> f64 {
        if self.dim_f() == 0 {
            return 0.0;
        }
        let gram = self.q.tr_mul(&self.q);
        let mut worst = 0.0f64;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }
}

// ------------------------------------------------------------------- file io

pub fn basis_to_string(b: &SubspaceBasis) -> String {
    let cols: Vec<String> = (0..b.dim_f())
        .map(|k| {
            let col: Vec<f64> = b.q.column(k).iter().cloned().collect();
            render_num_array(&col)
        })
        .collect();
    format!(
        "{{\"V\":{},\"d\":{},\"dim_f\":{},\"drop_tol\":{},\n\"basis\":[\n{}\n]}}\n",
        b.vocab,
        b.dim,
        b.dim_f(),
        fmt_f64(b.drop_tol),
        cols.join(",\n")
    )
}

pub fn write_basis(b: &SubspaceBasis, path: &Path) -> Result<()> {
    std::fs::write(path, basis_to_string(b))?;
    Ok(())
}

pub fn read_basis(path: &Path) -> Result<SubspaceBasis> {
    #[derive(Deserialize)]
    struct BasisDto {
        #[serde(rename = "V")]
        v: u32,
        d: usize,
        dim_f: usize,
        drop_tol: f64,
        basis: Vec<Vec<f64>>,
    }
    let text = std::fs::read_to_string(path)?;
    let dto: BasisDto = serde_json::from_str(&text)?;
    let ambient = dto.v as usize * dto.d;
    if dto.basis.len() != dto.dim_f {
        return Err(CoreError::Malformed(format!(
            "basis file declares dim_f={} but holds {} columns",
            dto.dim_f,
            dto.basis.len()
        )));
    }
    if dto.basis.iter().any(|c| c.len() != ambient) {
        return Err(CoreError::Malformed(format!(
            "basis columns must have length V*d = {ambient}"
        )));
    }
    let q = if dto.dim_f == 0 {
        DMatrix::zeros(ambient, 0)
    } else {
        let cols: Vec<DVector<f64>> = dto.basis.into_iter().map(DVector::from_vec).collect();
        DMatrix::from_columns(&cols)
    };
    let b = SubspaceBasis {
        vocab: dto.v,
        dim: dto.d,
        q,
        drop_tol: dto.drop_tol,
    };
    let defect = b.orthonormality_defect();
    if defect > 1e-8 {
        return Err(CoreError::Malformed(format!(
            "basis columns are not orthonormal (defect {defect:.3e})"
        )));
    }
    Ok(b)
}
