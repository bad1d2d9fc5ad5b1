//! Convolution over arbitrary structures.
//!
//! Every layer here is the factorised linear map `y = Σ_k A_kᵀ x Θ_k`: a stack
//! of sparse basis matrices `A` (the structure) combined with a dense
//! parameter `Θ` of shape `⟨K,P,Q⟩`. Grid (CNN) kernels, graph filters and
//! attention heads differ only in how the basis is built.

pub mod attention;
pub mod basis;
pub mod conv;
pub mod error;
pub mod io;
pub mod linalg;
pub mod reduction;
pub mod rng;
pub mod sparse;
pub mod tensor;
pub mod verify;

pub use attention::{
    attention_convolve, attention_heads, biaffine_attention, AttentionConvSpec, BiaffineParams, Head, Lambda,
    Mask, NormalisationPipeline, Step, Wiring,
};
pub use basis::{
    chebyshev_basis, gcn_basis, grid_basis, identity_basis, random_walk_basis, relation_sort_basis, shift_matrix,
    Edge, Graph, GridSpec, KernelSpec,
};
pub use conv::{
    apply_dense_phi, compose, convolve, convolve_batched, materialize_phi, plan_contraction,
    BasisStack, ContractionPath, ContractionPlan, ConvParams, PathChoice,
};
pub use error::{Error, Result};
pub use io::TensorFormat;
pub use reduction::{parameter_count, ReducedParams, Scheme};
pub use rng::InstanceRng;
pub use sparse::SparseMatrix;
pub use tensor::{DenseTensor, IndexBijection, MultiIndex, Shape};
