//! Reduced parametrisations of `Θ`: grouped, depth-wise separable, and
//! controlled separable. Each stores its factors and expands on demand to a
//! plain [`ConvParams`]; each also has a reassociated evaluation that never
//! forms the full `Θ`.

use crate::conv::{convolve, BasisStack, ConvParams};
use crate::error::{shape_err, Error, Result};
use crate::linalg;
use crate::sparse::SparseMatrix;
use crate::tensor::{mixed_product, DenseTensor};

/// `Θ_k` block diagonal with `ν` blocks of shape `⟨P/ν, Q/ν⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedParams {
    /// `⟨K, ν, P/ν, Q/ν⟩`
    blocks: DenseTensor,
}

impl GroupedParams {
    pub fn new(blocks: DenseTensor) -> Result<Self> {
        if blocks.rank() != 4 {
            return shape_err(format!(
                "grouped blocks must have shape <K,groups,P/groups,Q/groups>, got {}",
                blocks.shape()
            ));
        }
        Ok(GroupedParams { blocks })
    }

    /// Extracts the diagonal blocks of a dense `Θ`, ignoring anything off-block.
    pub fn from_dense_blocks(theta: &ConvParams, groups: usize) -> Result<Self> {
        let (k, p, q) = (theta.k(), theta.p(), theta.q());
        let (pg, qg) = group_dims(p, q, groups)?;
        let mut data = Vec::with_capacity(k * groups * pg * qg);
        for kk in 0..k {
            let b = theta.block(kk);
            for g in 0..groups {
                for i in 0..pg {
                    let row = (g * pg + i) * q + g * qg;
                    data.extend_from_slice(&b[row..row + qg]);
                }
            }
        }
        Self::new(DenseTensor::from_dims(&[k, groups, pg, qg], data)?)
    }

    pub fn k(&self) -> usize {
        self.blocks.dims()[0]
    }

    pub fn groups(&self) -> usize {
        self.blocks.dims()[1]
    }

    pub fn p(&self) -> usize {
        self.groups() * self.blocks.dims()[2]
    }

    pub fn q(&self) -> usize {
        self.groups() * self.blocks.dims()[3]
    }

    pub fn blocks(&self) -> &DenseTensor {
        &self.blocks
    }

    pub fn parameter_count(&self) -> u64 {
        self.blocks.data().len() as u64
    }

    fn group_params(&self, g: usize) -> ConvParams {
        let d = self.blocks.dims();
        let (k, groups, pg, qg) = (d[0], d[1], d[2], d[3]);
        let mut data = Vec::with_capacity(k * pg * qg);
        for kk in 0..k {
            let start = (kk * groups + g) * pg * qg;
            data.extend_from_slice(&self.blocks.data()[start..start + pg * qg]);
        }
        ConvParams::new(DenseTensor::from_dims(&[k, pg, qg], data).expect("positive dims"))
            .expect("rank 3")
    }
}

fn group_dims(p: usize, q: usize, groups: usize) -> Result<(usize, usize)> {
    if groups == 0 || p % groups != 0 || q % groups != 0 {
        return Err(Error::Argument(format!(
            "{groups} groups do not divide P = {p} and Q = {q}"
        )));
    }
    Ok((p / groups, q / groups))
}

pub fn expand_grouped(params: &GroupedParams) -> ConvParams {
    let d = params.blocks.dims();
    let (k, groups, pg, qg) = (d[0], d[1], d[2], d[3]);
    let (p, q) = (groups * pg, groups * qg);
    let mut theta = vec![0.0; k * p * q];
    let src = params.blocks.data();
    for kk in 0..k {
        for g in 0..groups {
            for i in 0..pg {
                let from = ((kk * groups + g) * pg + i) * qg;
                let to = kk * p * q + (g * pg + i) * q + g * qg;
                theta[to..to + qg].copy_from_slice(&src[from..from + qg]);
            }
        }
    }
    ConvParams::new(DenseTensor::from_dims(&[k, p, q], theta).expect("positive dims")).expect("rank 3")
}

/// `ν` independent convolutions on the channel slices, concatenated.
pub fn convolve_grouped(a: &BasisStack, x: &DenseTensor, params: &GroupedParams) -> Result<DenseTensor> {
    let (m, p) = x.matrix_dims()?;
    if p != params.p() {
        return shape_err(format!(
            "input has P = {p} channels but the grouped Θ expects P = {}",
            params.p()
        ));
    }
    let d = params.blocks.dims();
    let (groups, pg, qg) = (d[1], d[2], d[3]);
    let q = params.q();
    let mut y = vec![0.0; a.n() * q];
    for g in 0..groups {
        let xg: Vec<f64> = (0..m)
            .flat_map(|r| x.data()[r * p + g * pg..r * p + (g + 1) * pg].iter().copied())
            .collect();
        let yg = convolve(a, &DenseTensor::matrix(m, pg, xg)?, &params.group_params(g))?;
        for r in 0..a.n() {
            y[r * q + g * qg..r * q + (g + 1) * qg].copy_from_slice(&yg.data()[r * qg..(r + 1) * qg]);
        }
    }
    DenseTensor::matrix(a.n(), q, y)
}

/// `Θ_kpq = Θ⁽¹⁾_kp Θ⁽²⁾_pq`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseParams {
    /// `⟨K,P⟩`
    per_basis: DenseTensor,
    /// `⟨P,Q⟩`
    pointwise: DenseTensor,
}

impl DepthwiseParams {
    pub fn new(per_basis: DenseTensor, pointwise: DenseTensor) -> Result<Self> {
        let (_, p1) = per_basis.matrix_dims()?;
        let (p2, _) = pointwise.matrix_dims()?;
        if p1 != p2 {
            return shape_err(format!(
                "depth-wise factors disagree on P: {} vs {}",
                per_basis.shape(),
                pointwise.shape()
            ));
        }
        Ok(DepthwiseParams { per_basis, pointwise })
    }

    pub fn k(&self) -> usize {
        self.per_basis.dims()[0]
    }

    pub fn p(&self) -> usize {
        self.per_basis.dims()[1]
    }

    pub fn q(&self) -> usize {
        self.pointwise.dims()[1]
    }

    pub fn per_basis(&self) -> &DenseTensor {
        &self.per_basis
    }

    pub fn pointwise(&self) -> &DenseTensor {
        &self.pointwise
    }

    pub fn parameter_count(&self) -> u64 {
        (self.per_basis.data().len() + self.pointwise.data().len()) as u64
    }
}

pub fn expand_depthwise(params: &DepthwiseParams) -> ConvParams {
    let (k, p, q) = (params.k(), params.p(), params.q());
    let mut theta = Vec::with_capacity(k * p * q);
    for kk in 0..k {
        for pp in 0..p {
            let s = params.per_basis.at2(kk, pp);
            theta.extend((0..q).map(|qq| s * params.pointwise.at2(pp, qq)));
        }
    }
    ConvParams::new(DenseTensor::from_dims(&[k, p, q], theta).expect("positive dims")).expect("rank 3")
}

/// `(Σ_k A_kᵀ x diag(Θ⁽¹⁾_k)) Θ⁽²⁾`.
pub fn convolve_depthwise(a: &BasisStack, x: &DenseTensor, params: &DepthwiseParams) -> Result<DenseTensor> {
    let (m, p) = x.matrix_dims()?;
    if a.m() != m || a.k() != params.k() || p != params.p() {
        return shape_err(format!(
            "depth-wise convolution needs basis <{},{}> with K = {} and input <{},{}>, got input <{m},{p}>",
            a.m(),
            a.n(),
            params.k(),
            a.m(),
            params.p()
        ));
    }
    let n = a.n();
    let mut z = vec![0.0; n * p];
    let mut scaled = vec![0.0; m * p];
    for (k, ak) in a.matrices().iter().enumerate() {
        let d = &params.per_basis.data()[k * p..(k + 1) * p];
        for r in 0..m {
            for c in 0..p {
                scaled[r * p + c] = x.data()[r * p + c] * d[c];
            }
        }
        ak.transpose_mul_acc(&scaled, p, &mut z);
    }
    DenseTensor::matrix(n, params.q(), linalg::matmul(&z, params.pointwise.data(), n, p, params.q()))
}

/// The per-head channel maps of a controlled separable layer, optionally
/// reduced themselves.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelFactor {
    /// `⟨H,P,Q⟩`
    Dense(DenseTensor),
    Grouped(GroupedParams),
    Depthwise(DepthwiseParams),
}

impl ChannelFactor {
    pub fn h(&self) -> usize {
        match self {
            ChannelFactor::Dense(t) => t.dims()[0],
            ChannelFactor::Grouped(g) => g.k(),
            ChannelFactor::Depthwise(d) => d.k(),
        }
    }

    pub fn expand(&self) -> ConvParams {
        match self {
            ChannelFactor::Dense(t) => ConvParams::new(t.clone()).expect("validated rank 3"),
            ChannelFactor::Grouped(g) => expand_grouped(g),
            ChannelFactor::Depthwise(d) => expand_depthwise(d),
        }
    }

    pub fn parameter_count(&self) -> u64 {
        match self {
            ChannelFactor::Dense(t) => t.data().len() as u64,
            ChannelFactor::Grouped(g) => g.parameter_count(),
            ChannelFactor::Depthwise(d) => d.parameter_count(),
        }
    }

    fn convolve(&self, a: &BasisStack, x: &DenseTensor) -> Result<DenseTensor> {
        match self {
            ChannelFactor::Dense(t) => convolve(a, x, &ConvParams::new(t.clone())?),
            ChannelFactor::Grouped(g) => convolve_grouped(a, x, g),
            ChannelFactor::Depthwise(d) => convolve_depthwise(a, x, d),
        }
    }
}

/// `Θ = Θ⁽ᵇᵃˢⁱˢ⁾ ∘ Θ⁽ᶜʰᵃⁿⁿᵉˡ⁾`, so `Θ_k = Σ_h Θ⁽ᵇᵃˢⁱˢ⁾_hk Θ⁽ᶜʰᵃⁿⁿᵉˡ⁾_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledSeparableParams {
    /// `⟨H,K⟩`
    basis: DenseTensor,
    channel: ChannelFactor,
}

impl ControlledSeparableParams {
    pub fn new(basis: DenseTensor, channel: ChannelFactor) -> Result<Self> {
        let (h, k) = basis.matrix_dims()?;
        if let ChannelFactor::Dense(t) = &channel {
            if t.rank() != 3 {
                return shape_err(format!("channel factor must be <H,P,Q>, got {}", t.shape()));
            }
        }
        if channel.h() != h {
            return shape_err(format!(
                "basis factor has H = {h} but the channel factor has H = {}",
                channel.h()
            ));
        }
        let params = ControlledSeparableParams { basis, channel };
        if !params.in_useful_regime() {
            log::warn!(
                "controlled separability with H = {h}, K = {k}, PQ = {} saves nothing over dense Θ",
                params.p() * params.q()
            );
        }
        Ok(params)
    }

    pub fn h(&self) -> usize {
        self.basis.dims()[0]
    }

    pub fn k(&self) -> usize {
        self.basis.dims()[1]
    }

    pub fn p(&self) -> usize {
        match &self.channel {
            ChannelFactor::Dense(t) => t.dims()[1],
            ChannelFactor::Grouped(g) => g.p(),
            ChannelFactor::Depthwise(d) => d.p(),
        }
    }

    pub fn q(&self) -> usize {
        match &self.channel {
            ChannelFactor::Dense(t) => t.dims()[2],
            ChannelFactor::Grouped(g) => g.q(),
            ChannelFactor::Depthwise(d) => d.q(),
        }
    }

    pub fn basis(&self) -> &DenseTensor {
        &self.basis
    }

    pub fn channel(&self) -> &ChannelFactor {
        &self.channel
    }

    /// `H < K < PQ`.
    pub fn in_useful_regime(&self) -> bool {
        self.h() < self.k() && self.k() < self.p() * self.q()
    }

    pub fn parameter_count(&self) -> u64 {
        self.basis.data().len() as u64 + self.channel.parameter_count()
    }
}

pub fn expand_controlled_separable(params: &ControlledSeparableParams) -> ConvParams {
    let channel = params.channel.expand().into_tensor();
    let theta = mixed_product(&params.basis, &channel).expect("shared H checked on construction");
    ConvParams::new(theta).expect("rank 3")
}

/// `Σ_h (Σ_k Θ⁽ᵇᵃˢⁱˢ⁾_hk A_k)ᵀ x Θ⁽ᶜʰᵃⁿⁿᵉˡ⁾_h`.
pub fn convolve_controlled(
    a: &BasisStack,
    x: &DenseTensor,
    params: &ControlledSeparableParams,
) -> Result<DenseTensor> {
    if a.k() != params.k() {
        return shape_err(format!(
            "basis has K = {} matrices but Θ⁽ᵇᵃˢⁱˢ⁾ has K = {}",
            a.k(),
            params.k()
        ));
    }
    let (h, k) = (params.h(), params.k());
    let mixed = (0..h)
        .map(|hh| SparseMatrix::linear_combination(&params.basis.data()[hh * k..(hh + 1) * k], a.matrices()))
        .collect::<Result<Vec<_>>>()?;
    params.channel.convolve(&BasisStack::new(mixed)?, x)
}

/// Reduction scheme and its hyper-parameter, for counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Dense,
    Grouped { groups: usize },
    Depthwise,
    Controlled { h: usize },
}

/// Number of stored parameters: `KPQ`, `KPQ/ν`, `KP + PQ` or `H(K + PQ)`.
pub fn parameter_count(scheme: Scheme, k: usize, p: usize, q: usize) -> Result<u64> {
    let (k, p, q) = (k as u64, p as u64, q as u64);
    Ok(match scheme {
        Scheme::Dense => k * p * q,
        Scheme::Grouped { groups } => {
            group_dims(p as usize, q as usize, groups)?;
            k * p * q / groups as u64
        }
        Scheme::Depthwise => k * p + p * q,
        Scheme::Controlled { h } => h as u64 * (k + p * q),
    })
}

/// Any of the reduced forms.
#[derive(Debug, Clone, PartialEq)]
pub enum ReducedParams {
    Grouped(GroupedParams),
    Depthwise(DepthwiseParams),
    Controlled(ControlledSeparableParams),
}

impl ReducedParams {
    pub fn expand(&self) -> ConvParams {
        match self {
            ReducedParams::Grouped(g) => expand_grouped(g),
            ReducedParams::Depthwise(d) => expand_depthwise(d),
            ReducedParams::Controlled(c) => expand_controlled_separable(c),
        }
    }

    /// Evaluates without expanding `Θ`.
    pub fn convolve(&self, a: &BasisStack, x: &DenseTensor) -> Result<DenseTensor> {
        match self {
            ReducedParams::Grouped(g) => convolve_grouped(a, x, g),
            ReducedParams::Depthwise(d) => convolve_depthwise(a, x, d),
            ReducedParams::Controlled(c) => convolve_controlled(a, x, c),
        }
    }

    pub fn parameter_count(&self) -> u64 {
        match self {
            ReducedParams::Grouped(g) => g.parameter_count(),
            ReducedParams::Depthwise(d) => d.parameter_count(),
            ReducedParams::Controlled(c) => c.parameter_count(),
        }
    }

    pub fn scheme_name(&self) -> &'static str {
        match self {
            ReducedParams::Grouped(_) => "grouped",
            ReducedParams::Depthwise(_) => "depthwise",
            ReducedParams::Controlled(_) => "controlled",
        }
    }
}
