//! Dense tensors, shapes and index bijections.
//!
//! Multi-indices are 1-based at the public surface, matching the file formats.
//! Storage is row-major, so the canonical bijection over a shape is exactly the
//! position of an index in the value buffer (plus one).

use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::linalg;

/// Dimensions of a tensor. The empty shape denotes a scalar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return shape_err(format!("dimension {} of {:?} is zero", pos + 1, dims));
        }
        Ok(Shape(dims))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    /// Number of dimensions (the length of the shape).
    pub fn rank(&self) -> usize {
        self.0.len()
    }

    /// Size of the index set, the product of all dimensions.
    pub fn cardinality(&self) -> usize {
        self.0.iter().product()
    }

    pub fn concat(&self, other: &Shape) -> Shape {
        let mut dims = self.0.clone();
        dims.extend_from_slice(&other.0);
        Shape(dims)
    }

    /// Splits into the first `at` dimensions and the rest.
    pub fn split_at(&self, at: usize) -> Result<(Shape, Shape)> {
        if at > self.rank() {
            return shape_err(format!("cannot split {self} after {at} dimensions"));
        }
        let (a, b) = self.0.split_at(at);
        Ok((Shape(a.to_vec()), Shape(b.to_vec())))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ">")
    }
}

/// A 1-based multi-index into a [`Shape`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn new(coords: impl Into<Vec<usize>>) -> Self {
        MultiIndex(coords.into())
    }

    pub fn coords(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_index(shape: &Shape, idx: &MultiIndex) -> Result<()> {
    if idx.len() != shape.rank() {
        return Err(Error::Index(format!(
            "multi-index {:?} has length {}, shape {shape} has {}",
            idx.0,
            idx.len(),
            shape.rank()
        )));
    }
    for (i, (&s, &d)) in idx.0.iter().zip(shape.dims()).enumerate() {
        if s < 1 || s > d {
            return Err(Error::Index(format!(
                "coordinate {} = {s} outside 1..={d} of shape {shape}",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Canonical (row-major) linear index of `idx` in `shape`, 1-based.
pub fn canonical_index(shape: &Shape, idx: &MultiIndex) -> Result<usize> {
    check_index(shape, idx)?;
    Ok(1 + canonical_offset(shape.dims(), idx.coords()))
}

/// 0-based row-major offset of a 1-based multi-index; no range checks.
pub(crate) fn canonical_offset(dims: &[usize], coords: &[usize]) -> usize {
    coords
        .iter()
        .zip(dims)
        .fold(0, |acc, (&s, &d)| acc * d + (s - 1))
}

/// Inverse of [`canonical_index`].
pub fn canonical_multi_index(shape: &Shape, k: usize) -> Result<MultiIndex> {
    let card = shape.cardinality();
    if k < 1 || k > card {
        return Err(Error::Index(format!(
            "linear index {k} outside 1..={card} of shape {shape}"
        )));
    }
    Ok(MultiIndex(unravel(shape.dims(), k - 1)))
}

/// 1-based multi-index of a 0-based row-major offset.
pub(crate) fn unravel(dims: &[usize], mut offset: usize) -> Vec<usize> {
    let mut coords = vec![0; dims.len()];
    for (c, &d) in coords.iter_mut().zip(dims).rev() {
        *c = offset % d + 1;
        offset /= d;
    }
    coords
}

/// A bijection between the index set of a shape and `1..=K`.
///
/// The canonical bijection needs no table. Any other bijection is stored as an
/// explicit permutation: `forward[c]` is the image of the index whose canonical
/// position is `c + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexBijection {
    shape: Shape,
    table: Option<Permutation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl IndexBijection {
    pub fn canonical(shape: Shape) -> Self {
        IndexBijection { shape, table: None }
    }

    /// Builds a bijection from the images (1-based) of the indices listed in
    /// canonical order.
    pub fn from_table(shape: Shape, forward: Vec<usize>) -> Result<Self> {
        let card = shape.cardinality();
        if forward.len() != card {
            return shape_err(format!(
                "bijection table has {} entries, shape {shape} has {card} indices",
                forward.len()
            ));
        }
        let mut inverse = vec![usize::MAX; card];
        for (c, &k) in forward.iter().enumerate() {
            if k < 1 || k > card {
                return Err(Error::Index(format!("bijection image {k} outside 1..={card}")));
            }
            if inverse[k - 1] != usize::MAX {
                return Err(Error::Argument(format!("bijection image {k} repeated")));
            }
            inverse[k - 1] = c;
        }
        let forward = forward.into_iter().map(|k| k - 1).collect();
        Ok(IndexBijection {
            shape,
            table: Some(Permutation { forward, inverse }),
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn is_canonical(&self) -> bool {
        self.table.is_none()
    }

    pub fn len(&self) -> usize {
        self.shape.cardinality()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn forward(&self, idx: &MultiIndex) -> Result<usize> {
        check_index(&self.shape, idx)?;
        Ok(self.forward_offset(canonical_offset(self.shape.dims(), idx.coords())) + 1)
    }

    pub fn inverse(&self, k: usize) -> Result<MultiIndex> {
        let card = self.len();
        if k < 1 || k > card {
            return Err(Error::Index(format!("linear index {k} outside 1..={card}")));
        }
        Ok(MultiIndex(unravel(self.shape.dims(), self.inverse_offset(k - 1))))
    }

    /// 0-based image of the 0-based canonical position `c`.
    pub(crate) fn forward_offset(&self, c: usize) -> usize {
        match &self.table {
            None => c,
            Some(p) => p.forward[c],
        }
    }

    /// 0-based canonical position of the 0-based image `k`.
    pub(crate) fn inverse_offset(&self, k: usize) -> usize {
        match &self.table {
            None => k,
            Some(p) => p.inverse[k],
        }
    }
}

/// A real tensor of arbitrary order, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.cardinality() {
            return shape_err(format!(
                "{} values supplied for shape {shape} ({} expected)",
                data.len(),
                shape.cardinality()
            ));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn from_dims(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::new(Shape::new(dims)?, data)
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.cardinality();
        DenseTensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        DenseTensor {
            shape: Shape::scalar(),
            data: vec![v],
        }
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Self::from_dims(&[values.len()], values)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_dims(&[rows, cols], data)
    }

    /// Matrix from a list of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.as_ref().len() != cols {
                return shape_err("ragged rows");
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(Shape::new([n, n])?);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value at a 1-based multi-index.
    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        let idx = MultiIndex(idx.to_vec());
        check_index(&self.shape, &idx)?;
        Ok(self.data[canonical_offset(self.dims(), idx.coords())])
    }

    /// Same tensor under a new shape with equal cardinality.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Requires a matrix and returns `(rows, cols)`.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match *self.dims() {
            [r, c] => Ok((r, c)),
            _ => shape_err(format!("expected a matrix, got shape {}", self.shape)),
        }
    }

    /// 0-based matrix accessor; panics when out of range.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        let cols = self.dims()[1];
        self.data[i * cols + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `alpha * self + beta * other`.
    pub fn axpby(&self, alpha: f64, other: &DenseTensor, beta: f64) -> Result<Self> {
        self.same_shape(other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `max|a-b| / max(max|a|, max|b|)`, or the absolute difference when both are zero.
    pub fn rel_diff(&self, other: &DenseTensor) -> Result<f64> {
        let diff = self.max_abs_diff(other)?;
        let scale = self.max_abs().max(other.max_abs());
        Ok(if scale > 0.0 { diff / scale } else { diff })
    }

    fn same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(format!("shapes {} and {} differ", self.shape, other.shape));
        }
        Ok(())
    }
}

/// The sub-tensor `a_s` for a prefix multi-index `s`.
pub fn slice(a: &DenseTensor, prefix: &MultiIndex) -> Result<DenseTensor> {
    if prefix.len() > a.rank() {
        return shape_err(format!(
            "prefix of length {} exceeds tensor order {}",
            prefix.len(),
            a.rank()
        ));
    }
    let (head, tail) = a.shape.split_at(prefix.len())?;
    check_index(&head, prefix)?;
    let block = tail.cardinality();
    let start = canonical_offset(head.dims(), prefix.coords()) * block;
    Ok(DenseTensor {
        shape: tail,
        data: a.data[start..start + block].to_vec(),
    })
}

/// Flattens the leading dimensions governed by `omega` into one dimension of size `K`.
pub fn flatten(a: &DenseTensor, omega: &IndexBijection) -> Result<DenseTensor> {
    let s = omega.shape();
    if a.rank() < s.rank() || &a.dims()[..s.rank()] != s.dims() {
        return shape_err(format!(
            "bijection over {s} does not govern the prefix of tensor shape {}",
            a.shape
        ));
    }
    let (_, tail) = a.shape.split_at(s.rank())?;
    let block = tail.cardinality();
    let k = s.cardinality();
    let shape = Shape(vec![k]).concat(&tail);
    if omega.is_canonical() {
        return Ok(DenseTensor {
            shape,
            data: a.data.clone(),
        });
    }
    let mut data = Vec::with_capacity(a.data.len());
    for kk in 0..k {
        let c = omega.inverse_offset(kk);
        data.extend_from_slice(&a.data[c * block..(c + 1) * block]);
    }
    Ok(DenseTensor { shape, data })
}

/// Inverse of [`flatten`]: restores the leading dimension `K` to the shape of `omega`.
pub fn unflatten(a: &DenseTensor, omega: &IndexBijection) -> Result<DenseTensor> {
    let k = omega.len();
    if a.rank() == 0 || a.dims()[0] != k {
        return shape_err(format!(
            "leading dimension of {} does not match bijection size {k}",
            a.shape
        ));
    }
    let (_, tail) = a.shape.split_at(1)?;
    let block = tail.cardinality();
    let shape = omega.shape().concat(&tail);
    let mut data = vec![0.0; a.data.len()];
    for kk in 0..k {
        let c = omega.inverse_offset(kk);
        data[c * block..(c + 1) * block].copy_from_slice(&a.data[kk * block..(kk + 1) * block]);
    }
    Ok(DenseTensor { shape, data })
}

pub fn outer(a: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    let mut data = Vec::with_capacity(a.data.len() * b.data.len());
    for &x in &a.data {
        data.extend(b.data.iter().map(|&y| x * y));
    }
    DenseTensor {
        shape: a.shape.concat(&b.shape),
        data,
    }
}

/// `a ∘ b = Σ_k a_k ⊗ b_k` for tensors sharing their leading dimension.
pub fn mixed_product(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.rank() == 0 || b.rank() == 0 {
        return shape_err("mixed product needs tensors with a leading dimension");
    }
    let k = a.dims()[0];
    if b.dims()[0] != k {
        return shape_err(format!(
            "leading dimensions differ: {} vs {}",
            a.shape, b.shape
        ));
    }
    let (_, s) = a.shape.split_at(1)?;
    let (_, t) = b.shape.split_at(1)?;
    let (ns, nt) = (s.cardinality(), t.cardinality());
    let mut data = vec![0.0; ns * nt];
    for kk in 0..k {
        let ak = &a.data[kk * ns..(kk + 1) * ns];
        let bk = &b.data[kk * nt..(kk + 1) * nt];
        for (i, &x) in ak.iter().enumerate() {
            let row = &mut data[i * nt..(i + 1) * nt];
            for (r, &y) in row.iter_mut().zip(bk) {
                *r += x * y;
            }
        }
    }
    Ok(DenseTensor {
        shape: s.concat(&t),
        data,
    })
}

/// Finds the unique `Θ` of shape `⟨K⟩T` with `A ∘ Θ = Φ`, where the slices of
/// `A` (shape `⟨K⟩S`) form a basis of the tensors of shape `S`.
///
/// Flattening turns this into `Φ_flat = A_flatᵀ Θ_flat`, which is solved by
/// Gaussian elimination with partial pivoting.
pub fn solve_basis_coefficients(a: &DenseTensor, phi: &DenseTensor) -> Result<DenseTensor> {
    if a.rank() == 0 {
        return shape_err("basis tensor needs a leading dimension");
    }
    let k = a.dims()[0];
    let (_, s) = a.shape.split_at(1)?;
    let card = s.cardinality();
    if k != card {
        return shape_err(format!(
            "K = {k} basis tensors cannot span the {card}-dimensional space of shape {s}"
        ));
    }
    if phi.rank() < s.rank() || &phi.dims()[..s.rank()] != s.dims() {
        return shape_err(format!(
            "Φ of shape {} does not start with basis shape {s}",
            phi.shape
        ));
    }
    let (_, t) = phi.shape.split_at(s.rank())?;
    let nt = t.cardinality();
    // A_flat is K×|S|; the system matrix is its transpose.
    let system = linalg::transpose(&a.data, k, card);
    let theta = linalg::solve(&system, card, &phi.data, nt)?;
    DenseTensor::new(Shape(vec![k]).concat(&t), theta)
}

/// Rank of a matrix by row reduction, counting pivots above `tol` times the
/// largest absolute entry.
pub fn numerical_rank(m: &DenseTensor, tol: f64) -> Result<usize> {
    let (r, c) = m.matrix_dims()?;
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(linalg::rank(&m.data, r, c, tol))
}
