use crate::conv::BasisStack;
use crate::error::{shape_err, Error, Result};
use crate::sparse::SparseMatrix;
use crate::tensor::{canonical_offset, unravel, IndexBijection, Shape};

/// A grid (the index set of a shape) with its numbering of nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    bijection: IndexBijection,
}

impl GridSpec {
    pub fn new(shape: Shape) -> Self {
        GridSpec {
            bijection: IndexBijection::canonical(shape),
        }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        Ok(Self::new(Shape::new(dims)?))
    }

    pub fn with_bijection(bijection: IndexBijection) -> Self {
        GridSpec { bijection }
    }

    pub fn shape(&self) -> &Shape {
        self.bijection.shape()
    }

    pub fn bijection(&self) -> &IndexBijection {
        &self.bijection
    }

    /// Number of grid nodes.
    pub fn len(&self) -> usize {
        self.shape().cardinality()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// 1-based grid coordinates of 0-based node `node`.
    fn coords(&self, node: usize) -> Vec<usize> {
        unravel(self.shape().dims(), self.bijection.inverse_offset(node))
    }

    /// 0-based node at 1-based `coords`, or `None` outside the grid.
    fn node_at(&self, coords: &[i64]) -> Option<usize> {
        let dims = self.shape().dims();
        let mut c = Vec::with_capacity(coords.len());
        for (&v, &d) in coords.iter().zip(dims) {
            if v < 1 || v > d as i64 {
                return None;
            }
            c.push(v as usize);
        }
        Some(self.bijection.forward_offset(canonical_offset(dims, &c)))
    }
}

/// A regular right cuboid of shifts: per dimension a size `K_i`, a stride
/// `δ_i` and an offset `ε_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelSpec {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    offsets: Vec<i64>,
}

impl KernelSpec {
    pub fn new(sizes: Vec<usize>, strides: Vec<usize>, offsets: Vec<i64>) -> Result<Self> {
        if strides.len() != sizes.len() || offsets.len() != sizes.len() {
            return shape_err(format!(
                "kernel sizes, strides and offsets have lengths {}, {}, {}",
                sizes.len(),
                strides.len(),
                offsets.len()
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::Argument("kernel sizes must be ≥ 1".into()));
        }
        if strides.contains(&0) {
            return Err(Error::Argument("kernel strides must be ≥ 1".into()));
        }
        Ok(KernelSpec {
            sizes,
            strides,
            offsets,
        })
    }

    /// Unit-stride kernel whose taps are centred on the output node
    /// (`{-1,0,1}` for size 3; `{0,1}` for size 2).
    pub fn centered(sizes: Vec<usize>) -> Result<Self> {
        let offsets = sizes.iter().map(|&k| -1 - (k as i64 - 1) / 2).collect();
        let strides = vec![1; sizes.len()];
        Self::new(sizes, strides, offsets)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    /// Number of shifts, `Π K_i`.
    pub fn size(&self) -> usize {
        self.sizes.iter().product()
    }
}

/// Shift matrix `𝒜_d`: entry `(m, n)` is one when node `n` is node `m`
/// shifted by `d`.
pub fn shift_matrix(grid: &GridSpec, d: &[i64]) -> Result<SparseMatrix> {
    let rank = grid.shape().rank();
    if d.len() != rank {
        return shape_err(format!(
            "shift {d:?} has {} components for a grid of order {rank}",
            d.len()
        ));
    }
    let n = grid.len();
    let mut entries = Vec::new();
    let mut target = vec![0i64; rank];
    for m in 0..n {
        for ((t, &s), &di) in target.iter_mut().zip(&grid.coords(m)).zip(d) {
            *t = s as i64 + di;
        }
        if let Some(node) = grid.node_at(&target) {
            entries.push((m, node, 1.0));
        }
    }
    SparseMatrix::from_triplets(n, n, entries)
}

/// Shift vectors `Δ_k` of a cuboid kernel, ordered by the canonical bijection
/// over the kernel sizes: `Δ_ki = ε_i + (ω⁻¹k)_i · δ_i` with 1-based `ω⁻¹k`.
pub fn cuboid_offsets(spec: &KernelSpec) -> Vec<Vec<i64>> {
    (0..spec.size())
        .map(|k| {
            unravel(&spec.sizes, k)
                .into_iter()
                .zip(spec.strides.iter().zip(&spec.offsets))
                .map(|(c, (&stride, &eps))| eps + c as i64 * stride as i64)
                .collect()
        })
        .collect()
}

fn check_kernel_rank(grid: &GridSpec, spec: &KernelSpec) -> Result<()> {
    if spec.sizes.len() != grid.shape().rank() {
        return shape_err(format!(
            "kernel of order {} on a grid of order {}",
            spec.sizes.len(),
            grid.shape().rank()
        ));
    }
    Ok(())
}

/// Basis of a grid (CNN) convolution: one shift matrix per kernel tap.
/// Taps falling outside the grid contribute nothing (zero padding).
pub fn grid_basis(grid: &GridSpec, spec: &KernelSpec) -> Result<BasisStack> {
    check_kernel_rank(grid, spec)?;
    let mats = cuboid_offsets(spec)
        .iter()
        .map(|d| shift_matrix(grid, d))
        .collect::<Result<Vec<_>>>()?;
    BasisStack::new(mats)
}

/// Grid basis whose output keeps one node per cell of `factors` (dilated or
/// pooling layouts). Output node `c` on the coarse grid (canonical order)
/// stands for fine node `(c - 1)·f + 1`, and receives `x` at that node minus `Δ_k`.
pub fn grid_basis_subsampled(
    grid: &GridSpec,
    spec: &KernelSpec,
    factors: &[usize],
) -> Result<BasisStack> {
    check_kernel_rank(grid, spec)?;
    let dims = grid.shape().dims();
    if factors.len() != dims.len() {
        return shape_err(format!(
            "{} subsampling factors for a grid of order {}",
            factors.len(),
            dims.len()
        ));
    }
    let mut coarse = Vec::with_capacity(dims.len());
    for (&d, &f) in dims.iter().zip(factors) {
        if f == 0 || d % f != 0 {
            return Err(Error::Argument(format!(
                "subsampling factor {f} does not divide grid dimension {d}"
            )));
        }
        coarse.push(d / f);
    }
    let out_n: usize = coarse.iter().product();
    let m_total = grid.len();
    let mut mats = Vec::with_capacity(spec.size());
    for delta in cuboid_offsets(spec) {
        let mut entries = Vec::new();
        'nodes: for m in 0..m_total {
            let s = grid.coords(m);
            let mut c = Vec::with_capacity(s.len());
            for (i, (&si, &di)) in s.iter().zip(&delta).enumerate() {
                let t = si as i64 + di;
                if t < 1 || t > dims[i] as i64 || (t - 1) % factors[i] as i64 != 0 {
                    continue 'nodes;
                }
                c.push((t as usize - 1) / factors[i] + 1);
            }
            entries.push((m, canonical_offset(&coarse, &c), 1.0));
        }
        mats.push(SparseMatrix::from_triplets(m_total, out_n, entries)?);
    }
    BasisStack::new(mats)
}

/// `K = 1` basis holding the `N×N` identity: the 1×1 convolution.
pub fn identity_basis(n: usize) -> Result<BasisStack> {
    if n == 0 {
        return Err(Error::Argument("identity basis needs N ≥ 1".into()));
    }
    BasisStack::new(vec![SparseMatrix::identity(n)])
}
