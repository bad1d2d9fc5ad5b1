use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::{
    biaffine_attention, biaffine_attention_masked, BiaffineParams, Mask, NormalisationPipeline,
    Normalised,
};
use crate::basis::{shift_matrix, GridSpec};
use crate::conv::{convolve, BasisStack, ConvParams};
use crate::error::{shape_err, Error, Result};
use crate::linalg;
use crate::sparse::SparseMatrix;
use crate::tensor::{DenseTensor, Shape};

/// Which auxiliary inputs the mechanism reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Wiring {
    /// `x′` and `y′` are given separately.
    #[default]
    General,
    /// `x′ = x`, `y′` given.
    Cross,
    /// `x′ = y′ = x`.
    SelfAttention,
}

impl fmt::Display for Wiring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Wiring::General => "general",
            Wiring::Cross => "cross",
            Wiring::SelfAttention => "self",
        })
    }
}

impl FromStr for Wiring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(Wiring::General),
            "cross" => Ok(Wiring::Cross),
            "self" => Ok(Wiring::SelfAttention),
            _ => Err(Error::Parse(format!("unknown wiring '{s}' (general, cross, self)"))),
        }
    }
}

/// One term of an attention convolution: a learned mechanism, or a fixed
/// a-priori matrix such as a positional shift.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Mechanism(BiaffineParams),
    Fixed(SparseMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConvSpec {
    heads: Vec<Head>,
    pipeline: NormalisationPipeline,
    theta: ConvParams,
    wiring: Wiring,
    mask: Option<Mask>,
}

impl AttentionConvSpec {
    pub fn new(
        heads: Vec<Head>,
        pipeline: NormalisationPipeline,
        theta: ConvParams,
        wiring: Wiring,
        mask: Option<Mask>,
    ) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::Argument("an attention convolution needs at least one head".into()));
        }
        if heads.len() != theta.k() {
            return shape_err(format!("{} heads but Θ has K = {}", heads.len(), theta.k()));
        }
        match (pipeline.has_mask(), &mask) {
            (true, None) => return Err(Error::Argument("pipeline has a mask step but no mask was given".into())),
            (false, Some(_)) => return Err(Error::Argument("a mask was given but the pipeline has no mask step".into())),
            _ => {}
        }
        let p = theta.p();
        for (k, h) in heads.iter().enumerate() {
            let Head::Mechanism(xi) = h else { continue };
            match wiring {
                Wiring::Cross if xi.p() != p => {
                    return shape_err(format!(
                        "cross wiring needs P′ = P, head {} has P′ = {} and P = {p}",
                        k + 1,
                        xi.p()
                    ))
                }
                Wiring::SelfAttention if xi.p() != p || xi.q() != p => {
                    return shape_err(format!(
                        "self wiring needs P′ = Q′ = P, head {} has P′ = {}, Q′ = {} and P = {p}",
                        k + 1,
                        xi.p(),
                        xi.q()
                    ))
                }
                _ => {}
            }
        }
        Ok(AttentionConvSpec {
            heads,
            pipeline,
            theta,
            wiring,
            mask,
        })
    }

    pub fn k(&self) -> usize {
        self.heads.len()
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn pipeline(&self) -> &NormalisationPipeline {
        &self.pipeline
    }

    pub fn theta(&self) -> &ConvParams {
        &self.theta
    }

    pub fn wiring(&self) -> Wiring {
        self.wiring
    }

    pub fn mask(&self) -> Option<&Mask> {
        self.mask.as_ref()
    }

    /// Same spec with every factorised `Λ` multiplied out.
    pub fn with_expanded_lambdas(&self) -> Self {
        let heads = self
            .heads
            .iter()
            .map(|h| match h {
                Head::Mechanism(xi) => Head::Mechanism(xi.with_expanded_lambda()),
                fixed => fixed.clone(),
            })
            .collect();
        AttentionConvSpec { heads, ..self.clone() }
    }
}

/// The computed basis of an attention convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHeads {
    pub basis: BasisStack,
    /// `(head, columns)` for every head with fully masked columns, 0-based.
    pub fully_masked: Vec<(usize, Vec<usize>)>,
}

fn resolve_inputs<'a>(
    wiring: Wiring,
    x: &'a DenseTensor,
    x_aux: Option<&'a DenseTensor>,
    y_aux: Option<&'a DenseTensor>,
) -> Result<(&'a DenseTensor, &'a DenseTensor)> {
    let (xa, ya) = match (wiring, x_aux, y_aux) {
        (Wiring::General, Some(xa), Some(ya)) => (xa, ya),
        (Wiring::General, _, _) => {
            return Err(Error::Argument("general wiring needs both x′ and y′".into()))
        }
        (Wiring::Cross, None, Some(ya)) => (x, ya),
        (Wiring::Cross, _, _) => {
            return Err(Error::Argument("cross wiring takes x′ = x and needs only y′".into()))
        }
        (Wiring::SelfAttention, None, None) => (x, x),
        (Wiring::SelfAttention, _, _) => {
            return Err(Error::Argument("self wiring takes x′ = y′ = x; pass no auxiliary inputs".into()))
        }
    };
    let (m, _) = x.matrix_dims()?;
    let (ma, _) = xa.matrix_dims()?;
    if ma != m {
        return shape_err(format!("x′ has M = {ma} rows but x has M = {m}"));
    }
    Ok((xa, ya))
}

/// Evaluates every head: mechanism heads run through the pipeline, fixed
/// heads are used as they are.
pub fn attention_heads(
    spec: &AttentionConvSpec,
    x: &DenseTensor,
    x_aux: Option<&DenseTensor>,
    y_aux: Option<&DenseTensor>,
) -> Result<AttentionHeads> {
    let (xa, ya) = resolve_inputs(spec.wiring, x, x_aux, y_aux)?;
    let (m, n) = (xa.matrix_dims()?.0, ya.matrix_dims()?.0);
    let evaluated: Vec<(SparseMatrix, Vec<usize>)> = spec
        .heads
        .par_iter()
        .map(|head| match head {
            Head::Mechanism(xi) => {
                let scores = match &spec.mask {
                    Some(mask) if spec.pipeline.has_mask() => biaffine_attention_masked(xa, ya, xi, mask)?,
                    _ => biaffine_attention(xa, ya, xi)?,
                };
                let Normalised { matrix, fully_masked } = spec.pipeline.apply(scores, spec.mask.as_ref())?;
                Ok((SparseMatrix::from_dense(&matrix)?, fully_masked))
            }
            Head::Fixed(a) => {
                if (a.rows(), a.cols()) != (m, n) {
                    return shape_err(format!(
                        "fixed head is {}×{} but the mechanism heads are {m}×{n}",
                        a.rows(),
                        a.cols()
                    ));
                }
                Ok((a.clone(), Vec::new()))
            }
        })
        .collect::<Result<_>>()?;
    let mut mats = Vec::with_capacity(evaluated.len());
    let mut fully_masked = Vec::new();
    for (k, (a, empty)) in evaluated.into_iter().enumerate() {
        mats.push(a);
        if !empty.is_empty() {
            fully_masked.push((k, empty));
        }
    }
    Ok(AttentionHeads {
        basis: BasisStack::new(mats)?,
        fully_masked,
    })
}

/// `y = Σ_k a(x′, y′; Ξ_k)ᵀ x Θ_k`.
pub fn attention_convolve(
    spec: &AttentionConvSpec,
    x: &DenseTensor,
    x_aux: Option<&DenseTensor>,
    y_aux: Option<&DenseTensor>,
) -> Result<DenseTensor> {
    let heads = attention_heads(spec, x, x_aux, y_aux)?;
    convolve(&heads.basis, x, &spec.theta)
}

fn require_linear(xi: &BiaffineParams) -> Result<()> {
    if !xi.lambda().is_zero() {
        return Err(Error::Argument("graph attention heads must have Λ = 0".into()));
    }
    Ok(())
}

/// `A_k = softmax_cols(leaky(a(xΘ_k, xΘ_k; Ξ_k) + G))` with `Λ_k = 0`.
pub fn gat_head(
    x: &DenseTensor,
    theta_k: &DenseTensor,
    xi: &BiaffineParams,
    graph: &Mask,
    slope: f64,
) -> Result<DenseTensor> {
    require_linear(xi)?;
    let (m, p) = x.matrix_dims()?;
    let (tp, q) = theta_k.matrix_dims()?;
    if tp != p {
        return shape_err(format!("x has P = {p} channels but Θ_k is <{tp},{q}>"));
    }
    let h = DenseTensor::matrix(m, q, linalg::matmul(x.data(), theta_k.data(), m, p, q))?;
    let scores = biaffine_attention_masked(&h, &h, xi, graph)?;
    Ok(NormalisationPipeline::graph_attention(slope)?
        .apply(scores, Some(graph))?
        .matrix)
}

/// Graph attention layer: each head's matrix is computed from `xΘ_k` and then
/// used as the basis of `Σ_k A_kᵀ x Θ_k`.
pub fn gat_convolve(
    x: &DenseTensor,
    theta: &ConvParams,
    heads: &[BiaffineParams],
    graph: &Mask,
    slope: f64,
) -> Result<DenseTensor> {
    if heads.len() != theta.k() {
        return shape_err(format!("{} heads but Θ has K = {}", heads.len(), theta.k()));
    }
    let mats = heads
        .par_iter()
        .enumerate()
        .map(|(k, xi)| SparseMatrix::from_dense(&gat_head(x, &theta.block_matrix(k), xi, graph, slope)?))
        .collect::<Result<Vec<_>>>()?;
    convolve(&BasisStack::new(mats)?, x, theta)
}

/// The customary scaling `1/√D` of dot-product scores.
pub fn default_scale(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

/// `softmax_cols(scale · (x′Λ_key)(y′Λ_query)ᵀ + H)`.
pub fn transformer_head(
    x: &DenseTensor,
    y: &DenseTensor,
    key: &DenseTensor,
    query: &DenseTensor,
    scale: f64,
    mask: Option<&Mask>,
) -> Result<DenseTensor> {
    let xi = BiaffineParams::dot_product(key.clone(), query.clone())?;
    let pipeline = NormalisationPipeline::scaled_dot_product(scale, mask.is_some())?;
    let scores = match mask {
        Some(h) => biaffine_attention_masked(x, y, &xi, h)?,
        None => biaffine_attention(x, y, &xi)?,
    };
    Ok(pipeline.apply(scores, mask)?.matrix)
}

/// `Θ_k = Θ_value Θ_Oᵀ` for `Θ_value: ⟨P,D⟩` and the head's output block `⟨Q,D⟩`.
pub fn expand_transformer_theta(value: &DenseTensor, out_block: &DenseTensor) -> Result<DenseTensor> {
    let (p, d) = value.matrix_dims()?;
    let (q, d2) = out_block.matrix_dims()?;
    if d != d2 {
        return shape_err(format!(
            "value projection {} and output block {} differ in D",
            value.shape(),
            out_block.shape()
        ));
    }
    let ot = linalg::transpose(out_block.data(), q, d);
    DenseTensor::matrix(p, q, linalg::matmul(value.data(), &ot, p, d, q))
}

/// Splits `Θ_O: ⟨Q, K·D⟩` into `K` column blocks of shape `⟨Q,D⟩`.
pub fn split_output_projection(theta_o: &DenseTensor, k: usize) -> Result<Vec<DenseTensor>> {
    let (q, kd) = theta_o.matrix_dims()?;
    if k == 0 || kd % k != 0 {
        return shape_err(format!("Θ_O has {kd} columns, not a multiple of K = {k}"));
    }
    let d = kd / k;
    (0..k)
        .map(|h| {
            let data = (0..q)
                .flat_map(|r| theta_o.data()[r * kd + h * d..r * kd + (h + 1) * d].iter().copied())
                .collect();
            DenseTensor::matrix(q, d, data)
        })
        .collect()
}

/// Per-head `Θ_k` of a multi-head layer from value projections and the shared
/// output projection.
pub fn transformer_theta(values: &[DenseTensor], theta_o: &DenseTensor) -> Result<ConvParams> {
    let blocks = split_output_projection(theta_o, values.len())?;
    let thetas = values
        .iter()
        .zip(&blocks)
        .map(|(v, o)| expand_transformer_theta(v, o))
        .collect::<Result<Vec<_>>>()?;
    ConvParams::from_blocks(&thetas)
}

/// Multi-head output in concatenate-then-project form:
/// `[h_1 … h_K] Θ_Oᵀ` with `h_k = A_kᵀ x Θ_value,k`.
pub fn concat_project(
    a: &BasisStack,
    x: &DenseTensor,
    values: &[DenseTensor],
    theta_o: &DenseTensor,
) -> Result<DenseTensor> {
    if values.len() != a.k() {
        return shape_err(format!("{} value projections for K = {} heads", values.len(), a.k()));
    }
    let (q, kd) = theta_o.matrix_dims()?;
    let n = a.n();
    let mut concat = vec![0.0; n * kd];
    let mut offset = 0;
    for (ak, v) in a.matrices().iter().zip(values) {
        let single = BasisStack::new(vec![ak.clone()])?;
        let (p, d) = v.matrix_dims()?;
        let hk = convolve(&single, x, &ConvParams::new(v.clone().reshape(Shape::new([1, p, d])?)?)?)?;
        if offset + d > kd {
            return shape_err(format!("value projections have more than the {kd} columns of Θ_O"));
        }
        for r in 0..n {
            concat[r * kd + offset..r * kd + offset + d].copy_from_slice(&hk.data()[r * d..(r + 1) * d]);
        }
        offset += d;
    }
    if offset != kd {
        return shape_err(format!("value projections have {offset} columns in total, Θ_O has {kd}"));
    }
    let ot = linalg::transpose(theta_o.data(), q, kd);
    DenseTensor::matrix(n, q, linalg::matmul(&concat, &ot, n, kd, q))
}

/// Index-based heads for sequences: one shift matrix per offset on a 1-D grid.
pub fn positional_heads(grid: &GridSpec, shifts: &[i64]) -> Result<BasisStack> {
    if grid.shape().rank() != 1 {
        return Err(Error::Argument(format!(
            "positional heads need a 1-D grid, got shape {}",
            grid.shape()
        )));
    }
    let mats = shifts
        .iter()
        .map(|&d| shift_matrix(grid, &[d]))
        .collect::<Result<Vec<_>>>()?;
    BasisStack::new(mats)
}

impl Head {
    /// A dot-product head with factorised `Λ`.
    pub fn dot_product(key: DenseTensor, query: DenseTensor) -> Result<Self> {
        Ok(Head::Mechanism(BiaffineParams::dot_product(key, query)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{apply_mask, leaky_relu, softmax_columns, Lambda, Step};
    use crate::basis::{Edge, Graph};
    use crate::rng::InstanceRng;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> DenseTensor {
        DenseTensor::from_rows(rows).unwrap()
    }

    fn softmax_pipeline() -> NormalisationPipeline {
        NormalisationPipeline::new(vec![Step::SoftmaxColumns]).unwrap()
    }

    fn random_biaffine(rng: &mut InstanceRng, p: usize, q: usize) -> BiaffineParams {
        BiaffineParams::new(
            rng.uniform(),
            rng.tensor(&[p]).into_data(),
            rng.tensor(&[q]).into_data(),
            Lambda::Full(rng.tensor(&[p, q])),
        )
        .unwrap()
    }

    #[test]
    fn constant_mechanism_degenerates() {
        let mut rng = InstanceRng::new(3);
        let x = rng.tensor(&[3, 2]);
        let theta = ConvParams::new(rng.tensor(&[1, 2, 2])).unwrap();
        let none = NormalisationPipeline::default();
        let spec = AttentionConvSpec::new(
            vec![Head::Mechanism(BiaffineParams::zeros(2, 2))],
            none,
            theta.clone(),
            Wiring::SelfAttention,
            None,
        )
        .unwrap();
        let y = attention_convolve(&spec, &x, None, None).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));

        let fixed = rng.sparse_matrix(3, 3, 0.6);
        let spec = AttentionConvSpec::new(
            vec![Head::Fixed(SparseMatrix::from_dense(&fixed).unwrap())],
            softmax_pipeline(),
            theta.clone(),
            Wiring::SelfAttention,
            None,
        )
        .unwrap();
        let a = BasisStack::new(vec![SparseMatrix::from_dense(&fixed).unwrap()]).unwrap();
        assert_eq!(attention_convolve(&spec, &x, None, None).unwrap(), convolve(&a, &x, &theta).unwrap());
    }

    #[test]
    fn scalar_chain() {
        let theta = ConvParams::new(DenseTensor::from_dims(&[1, 1, 1], vec![3.0]).unwrap()).unwrap();
        let spec = AttentionConvSpec::new(
            vec![Head::Mechanism(BiaffineParams::zeros(1, 1))],
            softmax_pipeline(),
            theta,
            Wiring::SelfAttention,
            None,
        )
        .unwrap();
        let y = attention_convolve(&spec, &mat(&[&[2.0]]), None, None).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn uniform_self_attention() {
        // zero Ξ with a column softmax gives A = 1/M everywhere, so every output row is (1/M) 1ᵀ x Σ_k Θ_k
        let x = mat(&[&[1.0, 2.0], &[3.0, 5.0]]);
        let t1 = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let t2 = mat(&[&[0.0, 1.0], &[2.0, 0.0]]);
        let theta = ConvParams::from_blocks(&[t1, t2]).unwrap();
        let spec = AttentionConvSpec::new(
            vec![Head::Mechanism(BiaffineParams::zeros(2, 2)), Head::Mechanism(BiaffineParams::zeros(2, 2))],
            softmax_pipeline(),
            theta,
            Wiring::SelfAttention,
            None,
        )
        .unwrap();
        let y = attention_convolve(&spec, &x, None, None).unwrap();
        // column mean of x is (2, 3.5); Σ Θ = [[1,1],[2,1]]
        assert_eq!(y.data(), &[9.0, 5.5, 9.0, 5.5]);
    }

    #[test]
    fn wiring_violations_name_the_constraint() {
        let theta = ConvParams::new(DenseTensor::from_dims(&[1, 2, 1], vec![1.0, 1.0]).unwrap()).unwrap();
        let err = AttentionConvSpec::new(
            vec![Head::Mechanism(BiaffineParams::zeros(3, 2))],
            softmax_pipeline(),
            theta.clone(),
            Wiring::Cross,
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("P′ = P"), "{err}");
        let err = AttentionConvSpec::new(
            vec![Head::Mechanism(BiaffineParams::zeros(2, 3))],
            softmax_pipeline(),
            theta.clone(),
            Wiring::SelfAttention,
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("P′ = Q′ = P"), "{err}");
        let spec = AttentionConvSpec::new(
            vec![Head::Mechanism(BiaffineParams::zeros(2, 2))],
            softmax_pipeline(),
            theta,
            Wiring::Cross,
            None,
        )
        .unwrap();
        let x = DenseTensor::matrix(3, 2, vec![0.0; 6]).unwrap();
        assert!(attention_convolve(&spec, &x, None, None).is_err());
        assert!(attention_convolve(&spec, &x, Some(&x), Some(&x)).is_err());
        assert!(attention_convolve(&spec, &x, None, Some(&x)).is_ok());
    }

    #[test]
    fn gat_examples() {
        let mut rng = InstanceRng::new(8);
        let x = rng.tensor(&[4, 3]);
        let theta_k = rng.tensor(&[3, 2]);
        let zero = BiaffineParams::linear(0.0, vec![0.0; 2], vec![0.0; 2]).unwrap();
        let full = Mask::allow_all(4, 4);
        let a = gat_head(&x, &theta_k, &zero, &full, 0.2).unwrap();
        assert!(a.data().iter().all(|v| *v == 0.25));

        let isolated = Mask::from_allowed(4, 4, [(0, 1), (1, 0), (2, 1), (3, 2)]).unwrap();
        let a = gat_head(&x, &theta_k, &zero, &isolated, 0.2).unwrap();
        assert!((0..4).all(|i| a.at2(i, 3) == 0.0));

        let g = Graph::new(3, vec![Edge::new(1, 2, 1.0), Edge::new(2, 1, 1.0), Edge::new(2, 3, 1.0), Edge::new(3, 2, 1.0)])
            .unwrap();
        let mask = Mask::from_graph(&g);
        let x = rng.tensor(&[3, 3]);
        let xi = BiaffineParams::linear(rng.uniform(), rng.tensor(&[2]).into_data(), rng.tensor(&[2]).into_data()).unwrap();
        let a = gat_head(&x, &theta_k, &xi, &mask, 0.2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(a.at2(i, j) != 0.0, mask.is_allowed(i, j));
            }
        }

        let bilinear = BiaffineParams::zeros(2, 2);
        let mut l = rng.tensor(&[2, 2]);
        l.data_mut()[0] = 1.0;
        let bilinear = BiaffineParams::new(0.0, bilinear.mu().to_vec(), bilinear.nu().to_vec(), Lambda::Full(l)).unwrap();
        assert!(matches!(gat_head(&x, &theta_k, &bilinear, &mask, 0.2), Err(Error::Argument(_))));
    }

    #[test]
    fn gat_head_matches_dense_oracle() {
        let mut rng = InstanceRng::new(12);
        let x = rng.tensor(&[5, 3]);
        let theta_k = rng.tensor(&[3, 2]);
        let (mu, nu) = (rng.tensor(&[2]).into_data(), rng.tensor(&[2]).into_data());
        let xi = BiaffineParams::linear(0.3, mu.clone(), nu.clone()).unwrap();
        let mask = Mask::from_allowed(5, 5, (0..5).flat_map(|i| [(i, (i + 1) % 5), (i, (i + 3) % 5)])).unwrap();
        let a = gat_head(&x, &theta_k, &xi, &mask, 0.2).unwrap();
        let h = linalg::matmul(x.data(), theta_k.data(), 5, 3, 2);
        let mut s = vec![0.0; 25];
        for i in 0..5 {
            for j in 0..5 {
                let v = h[i * 2] * mu[0] + h[i * 2 + 1] * mu[1] + h[j * 2] * nu[0] + h[j * 2 + 1] * nu[1] + 0.3;
                s[i * 5 + j] = v;
            }
        }
        let s = apply_mask(&DenseTensor::matrix(5, 5, s).unwrap(), &mask).unwrap();
        let expect = softmax_columns(&leaky_relu(&s, 0.2).unwrap()).unwrap();
        assert!(a.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn transformer_examples() {
        let one = mat(&[&[1.0]]);
        let a = transformer_head(&mat(&[&[0.0], &[0.0]]), &one, &one, &one, 1.0, None).unwrap();
        assert_eq!(a.data(), &[0.5, 0.5]);

        let mut rng = InstanceRng::new(2);
        let (x, key, query) = (rng.tensor(&[4, 3]), rng.tensor(&[3, 2]), rng.tensor(&[3, 2]));
        let causal = Mask::causal(4);
        let a = transformer_head(&x, &x, &key, &query, default_scale(2), Some(&causal)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if !causal.is_allowed(i, j) {
                    assert_eq!(a.at2(i, j), 0.0);
                }
            }
        }
        assert!(transformer_head(&x, &x, &key, &rng.tensor(&[3, 1]), 1.0, None).is_err());
    }

    #[test]
    fn transformer_theta_examples() {
        let t = expand_transformer_theta(&mat(&[&[1.0], &[0.0]]), &mat(&[&[2.0], &[3.0]])).unwrap();
        assert_eq!(t, mat(&[&[2.0, 3.0], &[0.0, 0.0]]));
        let mut rng = InstanceRng::new(6);
        let v = rng.tensor(&[3, 2]);
        assert_eq!(expand_transformer_theta(&v, &DenseTensor::identity(2).unwrap()).unwrap(), v);
        assert!(expand_transformer_theta(&v, &rng.tensor(&[2, 3])).is_err());
        assert!(split_output_projection(&rng.tensor(&[2, 5]), 2).is_err());
    }

    #[test]
    fn positional_examples() {
        let g = GridSpec::from_dims(&[5]).unwrap();
        let id = positional_heads(&g, &[0]).unwrap();
        assert_eq!(id.matrices()[0], SparseMatrix::identity(5));
        let back = positional_heads(&g, &[-1]).unwrap();
        assert_eq!(back.matrices()[0].iter().collect::<Vec<_>>(), (1..5).map(|m| (m, m - 1, 1.0)).collect::<Vec<_>>());
        assert!(positional_heads(&GridSpec::from_dims(&[2, 2]).unwrap(), &[0]).is_err());
    }

    #[test]
    fn mixed_heads_add_up() {
        let mut rng = InstanceRng::new(15);
        let x = rng.tensor(&[5, 2]);
        let theta = ConvParams::new(rng.tensor(&[2, 2, 3])).unwrap();
        let xi = random_biaffine(&mut rng, 2, 2);
        let shift = positional_heads(&GridSpec::from_dims(&[5]).unwrap(), &[1]).unwrap().into_matrices().remove(0);
        let both = AttentionConvSpec::new(
            vec![Head::Mechanism(xi.clone()), Head::Fixed(shift.clone())],
            softmax_pipeline(),
            theta.clone(),
            Wiring::SelfAttention,
            None,
        )
        .unwrap();
        let t0 = ConvParams::new(DenseTensor::from_dims(&[1, 2, 3], theta.block(0).to_vec()).unwrap()).unwrap();
        let t1 = ConvParams::new(DenseTensor::from_dims(&[1, 2, 3], theta.block(1).to_vec()).unwrap()).unwrap();
        let att = AttentionConvSpec::new(vec![Head::Mechanism(xi)], softmax_pipeline(), t0, Wiring::SelfAttention, None)
            .unwrap();
        let pos = convolve(&BasisStack::new(vec![shift]).unwrap(), &x, &t1).unwrap();
        let sum = attention_convolve(&att, &x, None, None).unwrap().axpby(1.0, &pos, 1.0).unwrap();
        let y = attention_convolve(&both, &x, None, None).unwrap();
        assert!(y.max_abs_diff(&sum).unwrap() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn self_attention_matches_dense_heads(seed in any::<u64>(), m in 1usize..6, p in 1usize..4,
                                              q in 1usize..4, k in 1usize..4) {
            let mut rng = InstanceRng::new(seed);
            let x = rng.tensor(&[m, p]);
            let heads: Vec<_> = (0..k).map(|_| random_biaffine(&mut rng, p, p)).collect();
            let theta = ConvParams::new(rng.tensor(&[k, p, q])).unwrap();
            let spec = AttentionConvSpec::new(
                heads.iter().cloned().map(Head::Mechanism).collect(),
                softmax_pipeline(), theta.clone(), Wiring::SelfAttention, None).unwrap();
            let y = attention_convolve(&spec, &x, None, None).unwrap();
            // materialise every head densely and sum A_kᵀ x Θ_k by hand
            let mut expect = vec![0.0; m * q];
            for (kk, xi) in heads.iter().enumerate() {
                let a = softmax_columns(&biaffine_attention(&x, &x, xi).unwrap()).unwrap();
                let at = linalg::transpose(a.data(), m, m);
                let ax = linalg::matmul(&at, x.data(), m, m, p);
                let t = linalg::matmul(&ax, theta.block(kk), m, p, q);
                for (e, v) in expect.iter_mut().zip(t) {
                    *e += v;
                }
            }
            for (u, v) in y.data().iter().zip(&expect) {
                prop_assert!((u - v).abs() < 1e-11);
            }
        }

        #[test]
        fn factorised_head_matches_expanded(seed in any::<u64>(), m in 1usize..6, n in 1usize..6,
                                            p in 1usize..4, q in 1usize..4, d in 1usize..4) {
            let mut rng = InstanceRng::new(seed);
            let (x, y) = (rng.tensor(&[m, p]), rng.tensor(&[n, q]));
            let (key, query) = (rng.tensor(&[p, d]), rng.tensor(&[q, d]));
            let scale = default_scale(d);
            let head = transformer_head(&x, &y, &key, &query, scale, None).unwrap();
            let expanded = BiaffineParams::new(0.0, vec![0.0; p], vec![0.0; q],
                                               Lambda::Full(Lambda::Factorised { key, query }.expanded())).unwrap();
            let oracle = softmax_columns(&biaffine_attention(&x, &y, &expanded).unwrap().scaled(scale)).unwrap();
            prop_assert!(head.max_abs_diff(&oracle).unwrap() < 1e-12);
        }

        #[test]
        fn concat_project_matches_sum(seed in any::<u64>(), m in 1usize..6, p in 1usize..4,
                                      q in 1usize..4, d in 1usize..3, k in 1usize..4) {
            let mut rng = InstanceRng::new(seed);
            let x = rng.tensor(&[m, p]);
            let a = BasisStack::new((0..k).map(|_| SparseMatrix::from_dense(&rng.tensor(&[m, m])).unwrap()).collect()).unwrap();
            let values: Vec<_> = (0..k).map(|_| rng.tensor(&[p, d])).collect();
            let theta_o = rng.tensor(&[q, k * d]);
            let sum = convolve(&a, &x, &transformer_theta(&values, &theta_o).unwrap()).unwrap();
            let cat = concat_project(&a, &x, &values, &theta_o).unwrap();
            prop_assert!(sum.max_abs_diff(&cat).unwrap() < 1e-12);
        }

        #[test]
        fn general_wiring_is_linear_in_x(seed in any::<u64>(), m in 1usize..5, n in 1usize..5,
                                         p in 1usize..4, alpha in -2.0f64..2.0) {
            let mut rng = InstanceRng::new(seed);
            let (xa, ya) = (rng.tensor(&[m, 2]), rng.tensor(&[n, 3]));
            let theta = ConvParams::new(rng.tensor(&[2, p, 2])).unwrap();
            let spec = AttentionConvSpec::new(
                vec![Head::Mechanism(random_biaffine(&mut rng, 2, 3)), Head::Mechanism(random_biaffine(&mut rng, 2, 3))],
                softmax_pipeline(), theta, Wiring::General, None).unwrap();
            let (x1, x2) = (rng.tensor(&[m, p]), rng.tensor(&[m, p]));
            let combo = x1.axpby(alpha, &x2, 1.0).unwrap();
            let lhs = attention_convolve(&spec, &combo, Some(&xa), Some(&ya)).unwrap();
            let y1 = attention_convolve(&spec, &x1, Some(&xa), Some(&ya)).unwrap();
            let y2 = attention_convolve(&spec, &x2, Some(&xa), Some(&ya)).unwrap();
            prop_assert!(lhs.max_abs_diff(&y1.axpby(alpha, &y2, 1.0).unwrap()).unwrap() < 1e-12);
        }
    }
}
