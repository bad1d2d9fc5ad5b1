//! Compressed-row sparse matrices, the storage for basis matrices.

use std::collections::BTreeMap;

use crate::error::{shape_err, Error, Result};
use crate::tensor::DenseTensor;

/// A sparse `rows × cols` matrix, entries sorted row-major (CSR).
///
/// Indices are 0-based here; file formats add one.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triples in any order. Duplicate
    /// positions are rejected rather than summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::Index(format!(
                    "entry ({}, {}) outside a {rows}×{cols} matrix",
                    r + 1,
                    c + 1
                )));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::Argument(format!(
                "duplicate entry at ({}, {})",
                w[0].0 + 1,
                w[0].1 + 1
            )));
        }
        let mut row_ptr = vec![0; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx: entries.iter().map(|e| e.1).collect(),
            values: entries.iter().map(|e| e.2).collect(),
        })
    }

    /// Keeps the nonzero entries of a dense matrix.
    pub fn from_dense(m: &DenseTensor) -> Result<Self> {
        let (rows, cols) = m.matrix_dims()?;
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..rows {
            for j in 0..cols {
                let v = m.at2(i, j);
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `r` as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// All entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut data = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.iter() {
            data[r * self.cols + c] = v;
        }
        DenseTensor::from_dims(&[self.rows, self.cols], data)
            .unwrap_or_else(|_| unreachable!("non-empty dims"))
    }

    pub fn transpose(&self) -> SparseMatrix {
        let entries = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, entries)
            .unwrap_or_else(|_| unreachable!("transpose of a valid matrix"))
    }

    /// `out += selfᵀ · x` with `x: rows×p`, `out: cols×p`. Returns the
    /// multiply-add count, `nnz · p`.
    pub fn transpose_mul_acc(&self, x: &[f64], p: usize, out: &mut [f64]) -> u64 {
        debug_assert_eq!(x.len(), self.rows * p);
        debug_assert_eq!(out.len(), self.cols * p);
        for (m, n, v) in self.iter() {
            let src = &x[m * p..(m + 1) * p];
            let dst = &mut out[n * p..(n + 1) * p];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
        (self.nnz() * p) as u64
    }

    /// `selfᵀ · x` as a fresh `cols×p` buffer.
    pub fn transpose_mul(&self, x: &[f64], p: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols * p];
        self.transpose_mul_acc(x, p, &mut out);
        out
    }

    /// `self · x` with `x: cols×p`.
    pub fn mul_dense(&self, x: &[f64], p: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * p];
        for (m, n, v) in self.iter() {
            let src = &x[n * p..(n + 1) * p];
            let dst = &mut out[m * p..(m + 1) * p];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
        out
    }

    /// Sparse product `self · other`. Positions reached by some path are kept
    /// even if their sum cancels to zero.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return shape_err(format!(
                "cannot multiply {}×{} by {}×{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for r in 0..self.rows {
            acc.clear();
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    *acc.entry(c).or_insert(0.0) += a * b;
                }
            }
            for (&c, &v) in &acc {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix {
            rows: self.rows,
            cols: other.cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// `Σ_i coeffs[i] · mats[i]` over matrices of equal dimensions.
    pub fn linear_combination(coeffs: &[f64], mats: &[SparseMatrix]) -> Result<SparseMatrix> {
        let first = mats
            .first()
            .ok_or_else(|| Error::Argument("empty linear combination".into()))?;
        if coeffs.len() != mats.len() {
            return shape_err(format!(
                "{} coefficients for {} matrices",
                coeffs.len(),
                mats.len()
            ));
        }
        let (rows, cols) = (first.rows, first.cols);
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (&c, m) in coeffs.iter().zip(mats) {
            if (m.rows, m.cols) != (rows, cols) {
                return shape_err(format!(
                    "matrix {}×{} in a combination of {rows}×{cols} matrices",
                    m.rows, m.cols
                ));
            }
            for (r, k, v) in m.iter() {
                *acc.entry((r, k)).or_insert(0.0) += c * v;
            }
        }
        let entries = acc
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((r, k), v)| (r, k, v))
            .collect();
        SparseMatrix::from_triplets(rows, cols, entries)
    }
}
