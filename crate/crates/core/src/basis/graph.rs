use std::collections::{BTreeSet, HashSet};

use crate::conv::BasisStack;
use crate::error::{Error, Result};
use crate::linalg;
use crate::sparse::SparseMatrix;
use crate::tensor::DenseTensor;

/// A weighted directed edge between 1-based nodes, optionally labelled with a
/// relation name.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
    pub label: Option<String>,
}

impl Edge {
    pub fn new(u: usize, v: usize, w: f64) -> Self {
        Edge { u, v, w, label: None }
    }

    pub fn labelled(u: usize, v: usize, w: f64, label: impl Into<String>) -> Self {
        Edge {
            u,
            v,
            w,
            label: Some(label.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
}

impl Graph {
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("a graph needs at least one node".into()));
        }
        let mut seen = HashSet::new();
        for e in &edges {
            if e.u < 1 || e.u > n || e.v < 1 || e.v > n {
                return Err(Error::Index(format!(
                    "edge {} -> {} outside nodes 1..={n}",
                    e.u, e.v
                )));
            }
            if !e.w.is_finite() {
                return Err(Error::Argument(format!("edge {} -> {} has weight {}", e.u, e.v, e.w)));
            }
            if !seen.insert((e.u, e.v, e.label.clone())) {
                return Err(Error::Argument(format!(
                    "duplicate edge {} -> {} {}",
                    e.u,
                    e.v,
                    e.label.as_deref().unwrap_or("")
                )));
            }
        }
        Ok(Graph { n, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.edges.iter().filter_map(|e| e.label.as_deref()).collect()
    }

    /// Directed weighted adjacency; parallel edges with different labels add up.
    pub fn adjacency(&self) -> SparseMatrix {
        self.adjacency_where(|_| true)
    }

    /// Adjacency restricted to the edges of one relation.
    pub fn relation_adjacency(&self, label: &str) -> Result<SparseMatrix> {
        if !self.edges.iter().any(|e| e.label.as_deref() == Some(label)) {
            return Err(Error::Argument(format!("unknown relation '{label}'")));
        }
        Ok(self.adjacency_where(|e| e.label.as_deref() == Some(label)))
    }

    fn adjacency_where(&self, keep: impl Fn(&Edge) -> bool) -> SparseMatrix {
        let mut dense = vec![0.0; self.n * self.n];
        let mut present = vec![false; self.n * self.n];
        for e in self.edges.iter().filter(|e| keep(e)) {
            let i = (e.u - 1) * self.n + (e.v - 1);
            dense[i] += e.w;
            present[i] = true;
        }
        let entries = (0..self.n * self.n)
            .filter(|&i| present[i])
            .map(|i| (i / self.n, i % self.n, dense[i]))
            .collect();
        SparseMatrix::from_triplets(self.n, self.n, entries)
            .unwrap_or_else(|_| unreachable!("entries in range and unique"))
    }

    /// Undirected reading of the graph: `W_uv = max(w(u,v), w(v,u))`, dense row-major.
    pub fn symmetric_weights(&self) -> Vec<f64> {
        let n = self.n;
        let a = self.adjacency().to_dense();
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                w[i * n + j] = a.at2(i, j).max(a.at2(j, i));
            }
        }
        w
    }
}

/// Which normalised operator the single-matrix GCN basis uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GcnNormalisation {
    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the degrees of `A + I`.
    #[default]
    Renormalised,
    /// `I − D^{-1/2} A D^{-1/2}`.
    Laplacian,
}

/// `K = 1` graph-convolution basis from the renormalised adjacency.
pub fn gcn_basis(g: &Graph) -> Result<BasisStack> {
    gcn_basis_with(g, GcnNormalisation::Renormalised)
}

pub fn gcn_basis_with(g: &Graph, norm: GcnNormalisation) -> Result<BasisStack> {
    let n = g.n();
    let op = match norm {
        GcnNormalisation::Renormalised => {
            let mut w = g.symmetric_weights();
            for i in 0..n {
                w[i * n + i] += 1.0;
            }
            degree_normalise(&w, n)
        }
        GcnNormalisation::Laplacian => normalized_laplacian(g).into_data(),
    };
    BasisStack::new(vec![SparseMatrix::from_dense(&DenseTensor::matrix(n, n, op)?)?])
}

/// `D^{-1/2} W D^{-1/2}`, treating zero-degree rows as zero.
fn degree_normalise(w: &[f64], n: usize) -> Vec<f64> {
    let deg: Vec<f64> = (0..n).map(|i| w[i * n..(i + 1) * n].iter().sum()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = deg[i] * deg[j];
            if d > 0.0 {
                out[i * n + j] = w[i * n + j] / d.sqrt();
            }
        }
    }
    out
}

/// Symmetric normalised Laplacian `I − D^{-1/2} A D^{-1/2}` of the undirected graph.
pub fn normalized_laplacian(g: &Graph) -> DenseTensor {
    let n = g.n();
    let mut l = degree_normalise(&g.symmetric_weights(), n);
    for v in l.iter_mut() {
        *v = -*v;
    }
    for i in 0..n {
        l[i * n + i] += 1.0;
    }
    DenseTensor::matrix(n, n, l).unwrap_or_else(|_| unreachable!("n ≥ 1"))
}

const POWER_ITERATIONS: usize = 100;
const POWER_REL_CHANGE: f64 = 1e-9;
/// Spectral radius bound of the symmetric normalised Laplacian.
pub const LAPLACIAN_SPECTRAL_BOUND: f64 = 2.0;

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration on the Rayleigh quotient. Falls back to
/// [`LAPLACIAN_SPECTRAL_BOUND`] when no positive finite estimate emerges.
pub fn lambda_max(sym: &DenseTensor) -> f64 {
    let (n, _) = sym.matrix_dims().expect("square matrix");
    // deterministic start vector with no special symmetry
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let mut estimate = f64::NAN;
    for _ in 0..POWER_ITERATIONS {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            break;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let w = linalg::matmul(sym.data(), &v, n, n, 1);
        let rayleigh: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let done = (rayleigh - estimate).abs() <= POWER_REL_CHANGE * rayleigh.abs();
        estimate = rayleigh;
        v = w;
        if done {
            break;
        }
    }
    if estimate.is_finite() && estimate > 0.0 {
        estimate
    } else {
        LAPLACIAN_SPECTRAL_BOUND
    }
}

/// `L̃ = 2L/λ_max − I` and the `λ_max` used.
pub fn scaled_laplacian(g: &Graph) -> (DenseTensor, f64) {
    let l = normalized_laplacian(g);
    let lam = lambda_max(&l);
    let n = g.n();
    let mut data: Vec<f64> = l.data().iter().map(|v| 2.0 * v / lam).collect();
    for i in 0..n {
        data[i * n + i] -= 1.0;
    }
    (
        DenseTensor::matrix(n, n, data).unwrap_or_else(|_| unreachable!("n ≥ 1")),
        lam,
    )
}

/// Chebyshev basis `A_k = T_{k−1}(L̃)` for `k = 1..=K`.
pub fn chebyshev_basis(g: &Graph, order: usize) -> Result<BasisStack> {
    if order < 1 {
        return Err(Error::Argument("Chebyshev order K must be ≥ 1".into()));
    }
    let n = g.n();
    let (lt, _) = scaled_laplacian(g);
    let mut terms: Vec<Vec<f64>> = Vec::with_capacity(order);
    terms.push(DenseTensor::identity(n)?.into_data());
    if order > 1 {
        terms.push(lt.data().to_vec());
    }
    while terms.len() < order {
        let k = terms.len();
        let prod = linalg::matmul(lt.data(), &terms[k - 1], n, n, n);
        let next = prod
            .iter()
            .zip(&terms[k - 2])
            .map(|(a, b)| 2.0 * a - b)
            .collect();
        terms.push(next);
    }
    let mats = terms
        .into_iter()
        .map(|t| SparseMatrix::from_dense(&DenseTensor::matrix(n, n, t)?))
        .collect::<Result<Vec<_>>>()?;
    BasisStack::new(mats)
}

/// Adjacency powers `A_k = adjacency^k`, `k = 1..=K`.
pub fn random_walk_basis(g: &Graph, order: usize) -> Result<BasisStack> {
    if order < 1 {
        return Err(Error::Argument("walk length K must be ≥ 1".into()));
    }
    let adj = g.adjacency();
    let mut mats = vec![adj.clone()];
    while mats.len() < order {
        let next = mats.last().expect("non-empty").matmul(&adj)?;
        mats.push(next);
    }
    BasisStack::new(mats)
}

/// One basis matrix per relation sort `(r_1 … r_L)`: the product of the
/// relation adjacencies along the sort.
pub fn relation_sort_basis(g: &Graph, sorts: &[Vec<String>]) -> Result<BasisStack> {
    if sorts.is_empty() {
        return Err(Error::Argument("no relation sorts given".into()));
    }
    let mut mats = Vec::with_capacity(sorts.len());
    for sort in sorts {
        let (first, rest) = sort
            .split_first()
            .ok_or_else(|| Error::Argument("empty relation sort".into()))?;
        let mut acc = g.relation_adjacency(first)?;
        for r in rest {
            acc = acc.matmul(&g.relation_adjacency(r)?)?;
        }
        mats.push(acc);
    }
    BasisStack::new(mats)
}
