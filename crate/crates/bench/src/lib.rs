//! Shared workloads for the benchmarks.

use structconv::basis::{grid_basis, GridSpec, KernelSpec};
use structconv::{BasisStack, ConvParams, DenseTensor, Edge, Graph, InstanceRng, Result};

/// A batched convolution instance: basis, input `⟨B,M,P⟩` and parameters.
pub struct Workload {
    pub basis: BasisStack,
    pub input: DenseTensor,
    pub theta: ConvParams,
}

/// 2-D `side × side` grid with a centred `kernel × kernel` filter.
pub fn grid_workload(side: usize, kernel: usize, batch: usize, p: usize, q: usize, seed: u64) -> Result<Workload> {
    let mut rng = InstanceRng::new(seed);
    let basis = grid_basis(&GridSpec::from_dims(&[side, side])?, &KernelSpec::centered(vec![kernel, kernel])?)?;
    let theta = ConvParams::new(rng.tensor(&[basis.k(), p, q]))?;
    let input = rng.tensor(&[batch, side * side, p]);
    Ok(Workload { basis, input, theta })
}

/// Directed graph on `n` nodes with about `degree` out-edges per node.
pub fn random_graph(n: usize, degree: usize, seed: u64) -> Result<Graph> {
    let mut rng = InstanceRng::new(seed);
    let mut edges = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for u in 1..=n {
        for _ in 0..degree {
            let v = rng.range(1, n);
            if v != u && seen.insert((u, v)) {
                edges.push(Edge::new(u, v, rng.unit()));
            }
        }
    }
    Graph::new(n, edges)
}
