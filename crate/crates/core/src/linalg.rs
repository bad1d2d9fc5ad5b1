//! Small dense kernels on row-major slices.

use crate::error::{Error, Result};

/// Pivots smaller than this fraction of their row's largest entry are singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`. Returns the multiply-add count.
pub fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) -> u64 {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let x = a[i * k + l];
            let brow = &b[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += x * bv;
            }
        }
    }
    (m * k * n) as u64
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm_acc(a, b, &mut c, m, k, n);
    c
}

/// Solves `A X = B` for square `A` (n×n) and `B` (n×nrhs) by Gaussian
/// elimination with partial pivoting.
pub fn solve(a: &[f64], n: usize, b: &[f64], nrhs: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n * nrhs);
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    let mut scale: Vec<f64> = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty range");
        let pivot = a[pivot_row * n + col];
        if !(pivot.abs() > SINGULAR_PIVOT_RATIO * scale[pivot_row]) || !pivot.is_finite() {
            return Err(Error::SingularBasis(format!(
                "pivot {pivot:e} in column {} is below {SINGULAR_PIVOT_RATIO:e} of its row maximum {:e}",
                col + 1,
                scale[pivot_row]
            )));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            for j in 0..nrhs {
                x.swap(col * nrhs + j, pivot_row * nrhs + j);
            }
            scale.swap(col, pivot_row);
        }
        for i in col + 1..n {
            let f = a[i * n + col] / pivot;
            if f == 0.0 {
                continue;
            }
            a[i * n + col] = 0.0;
            for j in col + 1..n {
                a[i * n + j] -= f * a[col * n + j];
            }
            for j in 0..nrhs {
                x[i * nrhs + j] -= f * x[col * nrhs + j];
            }
        }
    }

    for col in (0..n).rev() {
        let pivot = a[col * n + col];
        for j in 0..nrhs {
            let mut v = x[col * nrhs + j];
            for l in col + 1..n {
                v -= a[col * n + l] * x[l * nrhs + j];
            }
            x[col * nrhs + j] = v / pivot;
        }
    }
    Ok(x)
}

/// Rank by row reduction with complete pivoting. A pivot counts when it exceeds
/// `tol` times the largest absolute entry of the input.
pub fn rank(a: &[f64], rows: usize, cols: usize, tol: f64) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    let mut a = a.to_vec();
    let threshold = tol * a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut r = 0;
    let mut cols_left: Vec<usize> = (0..cols).collect();
    while r < rows && !cols_left.is_empty() {
        let mut best = (r, 0, 0.0f64);
        for i in r..rows {
            for (ci, &j) in cols_left.iter().enumerate() {
                let v = a[i * cols + j].abs();
                if v > best.2 {
                    best = (i, ci, v);
                }
            }
        }
        if !(best.2 > threshold) {
            break;
        }
        let (pi, pci, _) = best;
        let pc = cols_left.swap_remove(pci);
        for j in 0..cols {
            a.swap(r * cols + j, pi * cols + j);
        }
        let pivot = a[r * cols + pc];
        for i in r + 1..rows {
            let f = a[i * cols + pc] / pivot;
            if f != 0.0 {
                for &j in &cols_left {
                    a[i * cols + j] -= f * a[r * cols + j];
                }
                a[i * cols + pc] = 0.0;
            }
        }
        r += 1;
    }
    r
}
