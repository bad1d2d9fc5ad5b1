//! The generic convolution `y = Σ_k A_kᵀ x Θ_k`, its dense materialisation
//! and the composition of two convolutions.

mod plan;

pub use plan::{
    convolve_batched, execute_batched, plan_contraction, plan_for_path, ContractionDims,
    ContractionPath, ContractionPlan, Execution, PathChoice, PathCosts,
};

use crate::error::{shape_err, Error, Result};
use crate::linalg;
use crate::sparse::SparseMatrix;
use crate::tensor::{DenseTensor, Shape};

/// Default entry cap for a materialised `Φ` of shape `⟨M,N,P,Q⟩`.
pub const DEFAULT_PHI_CAP: usize = 100_000_000;

/// The structural part of a convolution: `K` sparse matrices of shape `⟨M,N⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisStack {
    m: usize,
    n: usize,
    mats: Vec<SparseMatrix>,
}

impl BasisStack {
    pub fn new(mats: Vec<SparseMatrix>) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| Error::Argument("a basis needs at least one matrix".into()))?;
        let (m, n) = (first.rows(), first.cols());
        if m == 0 || n == 0 {
            return shape_err("basis matrices must have at least one row and column");
        }
        for (k, a) in mats.iter().enumerate() {
            if (a.rows(), a.cols()) != (m, n) {
                return shape_err(format!(
                    "basis matrix {} is {}×{}, matrix 1 is {m}×{n}",
                    k + 1,
                    a.rows(),
                    a.cols()
                ));
            }
        }
        Ok(BasisStack { m, n, mats })
    }

    pub fn k(&self) -> usize {
        self.mats.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrices(&self) -> &[SparseMatrix] {
        &self.mats
    }

    pub fn into_matrices(self) -> Vec<SparseMatrix> {
        self.mats
    }

    /// Total stored entries over all `K` matrices.
    pub fn nnz(&self) -> usize {
        self.mats.iter().map(SparseMatrix::nnz).sum()
    }

    /// Appends the matrices of `other`, which must share `⟨M,N⟩`.
    pub fn concat(&self, other: &BasisStack) -> Result<BasisStack> {
        let mut mats = self.mats.clone();
        mats.extend(other.mats.iter().cloned());
        BasisStack::new(mats)
    }

    /// Dense `⟨K,M,N⟩` tensor of the stack.
    pub fn to_dense(&self) -> DenseTensor {
        let mut data = Vec::with_capacity(self.k() * self.m * self.n);
        for a in &self.mats {
            data.extend_from_slice(a.to_dense().data());
        }
        DenseTensor::from_dims(&[self.k(), self.m, self.n], data)
            .unwrap_or_else(|_| unreachable!("non-empty dims"))
    }
}

/// The parameter `Θ` of shape `⟨K,P,Q⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    theta: DenseTensor,
}

impl ConvParams {
    pub fn new(theta: DenseTensor) -> Result<Self> {
        if theta.rank() != 3 {
            return shape_err(format!(
                "convolution parameters must have shape <K,P,Q>, got {}",
                theta.shape()
            ));
        }
        Ok(ConvParams { theta })
    }

    /// Stacks `K` matrices of identical shape `⟨P,Q⟩`.
    pub fn from_blocks(blocks: &[DenseTensor]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::Argument("no parameter blocks".into()))?;
        let (p, q) = first.matrix_dims()?;
        let mut data = Vec::with_capacity(blocks.len() * p * q);
        for b in blocks {
            if b.matrix_dims()? != (p, q) {
                return shape_err(format!(
                    "parameter block {} differs from <{p},{q}>",
                    b.shape()
                ));
            }
            data.extend_from_slice(b.data());
        }
        Self::new(DenseTensor::from_dims(&[blocks.len(), p, q], data)?)
    }

    pub fn k(&self) -> usize {
        self.theta.dims()[0]
    }

    pub fn p(&self) -> usize {
        self.theta.dims()[1]
    }

    pub fn q(&self) -> usize {
        self.theta.dims()[2]
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.theta
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.theta
    }

    /// Row-major values of `Θ_k` (0-based `k`).
    pub fn block(&self, k: usize) -> &[f64] {
        let pq = self.p() * self.q();
        &self.theta.data()[k * pq..(k + 1) * pq]
    }

    pub fn block_matrix(&self, k: usize) -> DenseTensor {
        DenseTensor::matrix(self.p(), self.q(), self.block(k).to_vec())
            .unwrap_or_else(|_| unreachable!("non-empty dims"))
    }
}

fn check_conv_dims(a: &BasisStack, m: usize, p: usize, theta: &ConvParams) -> Result<()> {
    if a.m() != m {
        return shape_err(format!(
            "basis has M = {} rows but the input has M = {m} entries",
            a.m()
        ));
    }
    if theta.k() != a.k() {
        return shape_err(format!(
            "basis has K = {} matrices but Θ has K = {}",
            a.k(),
            theta.k()
        ));
    }
    if theta.p() != p {
        return shape_err(format!(
            "input has P = {p} channels but Θ expects P = {}",
            theta.p()
        ));
    }
    Ok(())
}

/// One slice of the basis-first evaluation: `out += Σ_k A_kᵀ x Θ_k`.
pub(crate) fn accumulate_basis_first(
    a: &BasisStack,
    x: &[f64],
    theta: &ConvParams,
    out: &mut [f64],
) -> u64 {
    let (n, p, q) = (a.n(), theta.p(), theta.q());
    let mut count = 0;
    let mut t = vec![0.0; n * p];
    for (k, ak) in a.matrices().iter().enumerate() {
        t.iter_mut().for_each(|v| *v = 0.0);
        count += ak.transpose_mul_acc(x, p, &mut t);
        count += linalg::gemm_acc(&t, theta.block(k), out, n, p, q);
    }
    count
}

/// `y = Σ_k A_kᵀ x Θ_k` for `x: ⟨M,P⟩`, giving `y: ⟨N,Q⟩`.
pub fn convolve(a: &BasisStack, x: &DenseTensor, theta: &ConvParams) -> Result<DenseTensor> {
    let (m, p) = x.matrix_dims()?;
    check_conv_dims(a, m, p, theta)?;
    let mut y = vec![0.0; a.n() * theta.q()];
    accumulate_basis_first(a, x.data(), theta, &mut y);
    DenseTensor::matrix(a.n(), theta.q(), y)
}

/// `Φ = Σ_k A_k ⊗ Θ_k` of shape `⟨M,N,P,Q⟩`, refused above [`DEFAULT_PHI_CAP`] entries.
pub fn materialize_phi(a: &BasisStack, theta: &ConvParams) -> Result<DenseTensor> {
    materialize_phi_capped(a, theta, DEFAULT_PHI_CAP)
}

pub fn materialize_phi_capped(
    a: &BasisStack,
    theta: &ConvParams,
    cap: usize,
) -> Result<DenseTensor> {
    let (phi, _) = materialize_phi_counted(a, theta, cap)?;
    Ok(phi)
}

pub(crate) fn materialize_phi_counted(
    a: &BasisStack,
    theta: &ConvParams,
    cap: usize,
) -> Result<(DenseTensor, u64)> {
    if theta.k() != a.k() {
        return shape_err(format!(
            "basis has K = {} matrices but Θ has K = {}",
            a.k(),
            theta.k()
        ));
    }
    let (m, n, p, q) = (a.m(), a.n(), theta.p(), theta.q());
    let entries = [m, n, p, q]
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&e| e <= cap)
        .ok_or_else(|| {
            Error::Size(format!(
                "Φ of shape <{m},{n},{p},{q}> exceeds the cap of {cap} entries"
            ))
        })?;
    let pq = p * q;
    let mut phi = vec![0.0; entries];
    let mut count = 0u64;
    for (k, ak) in a.matrices().iter().enumerate() {
        let block = theta.block(k);
        for (r, c, v) in ak.iter() {
            let dst = &mut phi[(r * n + c) * pq..(r * n + c + 1) * pq];
            for (d, &t) in dst.iter_mut().zip(block) {
                *d += v * t;
            }
        }
        count += (ak.nnz() * pq) as u64;
    }
    Ok((DenseTensor::new(Shape::new([m, n, p, q])?, phi)?, count))
}

/// `y_nq = Σ_mp x_mp Φ_mnpq`, the unconstrained linear transform.
pub fn apply_dense_phi(phi: &DenseTensor, x: &DenseTensor) -> Result<DenseTensor> {
    let (m, p) = x.matrix_dims()?;
    let (n, q) = check_phi_dims(phi, m, p)?;
    let mut y = vec![0.0; n * q];
    apply_phi_slice(phi.data(), x.data(), &mut y, m, n, p, q);
    DenseTensor::matrix(n, q, y)
}

pub(crate) fn check_phi_dims(phi: &DenseTensor, m: usize, p: usize) -> Result<(usize, usize)> {
    match *phi.dims() {
        [pm, n, pp, q] if pm == m && pp == p => Ok((n, q)),
        [..] => shape_err(format!(
            "Φ of shape {} cannot act on an input of shape <{m},{p}>",
            phi.shape()
        )),
    }
}

pub(crate) fn apply_phi_slice(
    phi: &[f64],
    x: &[f64],
    y: &mut [f64],
    m: usize,
    n: usize,
    p: usize,
    q: usize,
) -> u64 {
    for mi in 0..m {
        for ni in 0..n {
            let yrow = &mut y[ni * q..(ni + 1) * q];
            for pi in 0..p {
                let xv = x[mi * p + pi];
                let base = ((mi * n + ni) * p + pi) * q;
                for (yv, &f) in yrow.iter_mut().zip(&phi[base..base + q]) {
                    *yv += xv * f;
                }
            }
        }
    }
    (m * n * p * q) as u64
}

/// Composition of two convolutions (first `(A′,Θ′)`, then `(A″,Θ″)`) as a
/// single convolution of size `K′K″`, indexed by the canonical bijection over
/// `⟨K′,K″⟩`.
pub fn compose(
    a1: &BasisStack,
    theta1: &ConvParams,
    a2: &BasisStack,
    theta2: &ConvParams,
) -> Result<(BasisStack, ConvParams)> {
    if a1.k() != theta1.k() || a2.k() != theta2.k() {
        return shape_err("basis and parameter sizes K disagree");
    }
    if a1.n() != a2.m() {
        return shape_err(format!(
            "first convolution outputs N′ = {} entries, second expects M″ = {}",
            a1.n(),
            a2.m()
        ));
    }
    if theta1.q() != theta2.p() {
        return shape_err(format!(
            "first convolution outputs Q′ = {} channels, second expects P″ = {}",
            theta1.q(),
            theta2.p()
        ));
    }
    let (p, r, q) = (theta1.p(), theta1.q(), theta2.q());
    let mut mats = Vec::with_capacity(a1.k() * a2.k());
    let mut blocks = Vec::with_capacity(a1.k() * a2.k() * p * q);
    for (k1, m1) in a1.matrices().iter().enumerate() {
        for (k2, m2) in a2.matrices().iter().enumerate() {
            mats.push(m1.matmul(m2)?);
            blocks.extend(linalg::matmul(theta1.block(k1), theta2.block(k2), p, r, q));
        }
    }
    let k = mats.len();
    Ok((
        BasisStack::new(mats)?,
        ConvParams::new(DenseTensor::from_dims(&[k, p, q], blocks)?)?,
    ))
}

/// Merges basis matrices that are exactly equal, summing their parameter
/// blocks. The first occurrence fixes the order.
pub fn merge_duplicate_bases(
    a: &BasisStack,
    theta: &ConvParams,
) -> Result<(BasisStack, ConvParams)> {
    if a.k() != theta.k() {
        return shape_err("basis and parameter sizes K disagree");
    }
    let mut mats: Vec<SparseMatrix> = Vec::new();
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for (k, ak) in a.matrices().iter().enumerate() {
        match mats.iter().position(|m| m == ak) {
            Some(i) => {
                for (b, &t) in blocks[i].iter_mut().zip(theta.block(k)) {
                    *b += t;
                }
            }
            None => {
                mats.push(ak.clone());
                blocks.push(theta.block(k).to_vec());
            }
        }
    }
    let k = mats.len();
    Ok((
        BasisStack::new(mats)?,
        ConvParams::new(DenseTensor::from_dims(
            &[k, theta.p(), theta.q()],
            blocks.concat(),
        )?)?,
    ))
}
