//! Content-based convolution: basis matrices computed from the data by an
//! attention mechanism, then masked and normalised before the usual
//! `y = Σ_k A_kᵀ x Θ_k`.

mod conv;

pub use conv::*;

use std::fmt;
use std::str::FromStr;

use crate::basis::Graph;
use crate::error::{shape_err, Error, Result};
use crate::linalg;
use crate::tensor::DenseTensor;

/// Default slope of the leaky ReLU.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// The bilinear weight `Λ`, either as a full `⟨P′,Q′⟩` matrix or as the
/// low-rank product `Λ_key Λ_queryᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub enum Lambda {
    Full(DenseTensor),
    Factorised { key: DenseTensor, query: DenseTensor },
}

impl Lambda {
    fn dims(&self) -> Result<(usize, usize)> {
        match self {
            Lambda::Full(l) => l.matrix_dims(),
            Lambda::Factorised { key, query } => {
                let (p, d1) = key.matrix_dims()?;
                let (q, d2) = query.matrix_dims()?;
                if d1 != d2 {
                    return shape_err(format!(
                        "key and query projections differ in D: {} vs {}",
                        key.shape(),
                        query.shape()
                    ));
                }
                Ok((p, q))
            }
        }
    }

    pub fn expanded(&self) -> DenseTensor {
        match self {
            Lambda::Full(l) => l.clone(),
            Lambda::Factorised { key, query } => {
                let (p, d, q) = (key.dims()[0], key.dims()[1], query.dims()[0]);
                let qt = linalg::transpose(query.data(), q, d);
                DenseTensor::matrix(p, q, linalg::matmul(key.data(), &qt, p, d, q)).expect("positive dims")
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Lambda::Full(l) => l.data().iter().all(|v| *v == 0.0),
            Lambda::Factorised { .. } => self.expanded().data().iter().all(|v| *v == 0.0),
        }
    }
}

/// Parameters `Ξ = ⟨ξ, μ, ν, Λ⟩` of the bi-affine mechanism
/// `x′Λy′ᵀ + (x′μ)⊗1 + 1⊗(y′ν) + ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiaffineParams {
    xi: f64,
    mu: Vec<f64>,
    nu: Vec<f64>,
    lambda: Lambda,
}

impl BiaffineParams {
    pub fn new(xi: f64, mu: Vec<f64>, nu: Vec<f64>, lambda: Lambda) -> Result<Self> {
        let (p, q) = lambda.dims()?;
        if mu.len() != p || nu.len() != q {
            return shape_err(format!(
                "Λ is <{p},{q}> but μ has {} entries and ν has {}",
                mu.len(),
                nu.len()
            ));
        }
        Ok(BiaffineParams { xi, mu, nu, lambda })
    }

    /// All-zero parameters for inputs with `p` and `q` features.
    pub fn zeros(p: usize, q: usize) -> Self {
        BiaffineParams {
            xi: 0.0,
            mu: vec![0.0; p],
            nu: vec![0.0; q],
            lambda: Lambda::Full(DenseTensor::matrix(p, q, vec![0.0; p * q]).expect("positive dims")),
        }
    }

    /// A linear (`Λ = 0`) mechanism as used by graph attention.
    pub fn linear(xi: f64, mu: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        let (p, q) = (mu.len(), nu.len());
        if p == 0 || q == 0 {
            return shape_err("μ and ν must be non-empty");
        }
        Self::new(xi, mu, nu, Lambda::Full(DenseTensor::matrix(p, q, vec![0.0; p * q])?))
    }

    /// Scaled dot-product scores `(x′Λ_key)(y′Λ_query)ᵀ`; scaling is left to the pipeline.
    pub fn dot_product(key: DenseTensor, query: DenseTensor) -> Result<Self> {
        let lambda = Lambda::Factorised { key, query };
        let (p, q) = lambda.dims()?;
        Self::new(0.0, vec![0.0; p], vec![0.0; q], lambda)
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn lambda(&self) -> &Lambda {
        &self.lambda
    }

    /// `P′`, the feature count of the first auxiliary input.
    pub fn p(&self) -> usize {
        self.mu.len()
    }

    /// `Q′`, the feature count of the second auxiliary input.
    pub fn q(&self) -> usize {
        self.nu.len()
    }

    /// Same parameters with `Λ` multiplied out.
    pub fn with_expanded_lambda(&self) -> Self {
        BiaffineParams {
            lambda: Lambda::Full(self.lambda.expanded()),
            ..self.clone()
        }
    }
}

/// Per-row projections shared by every cell of the score matrix.
struct Projections {
    /// `x′Λ` (`⟨M,Q′⟩`) or `x′Λ_key` (`⟨M,D⟩`)
    left: Vec<f64>,
    /// `y′` or `y′Λ_query`, with the same width as `left`
    right: Vec<f64>,
    width: usize,
    row_bias: Vec<f64>,
    col_bias: Vec<f64>,
}

fn project(x: &DenseTensor, y: &DenseTensor, xi: &BiaffineParams) -> Result<(usize, usize, Projections)> {
    let (m, p) = x.matrix_dims()?;
    let (n, q) = y.matrix_dims()?;
    if p != xi.p() || q != xi.q() {
        return shape_err(format!(
            "mechanism expects inputs with P′ = {} and Q′ = {} features, got P′ = {p} and Q′ = {q}",
            xi.p(),
            xi.q()
        ));
    }
    let (left, right, width) = match &xi.lambda {
        Lambda::Full(l) => (linalg::matmul(x.data(), l.data(), m, p, q), y.data().to_vec(), q),
        Lambda::Factorised { key, query } => {
            let d = key.dims()[1];
            (
                linalg::matmul(x.data(), key.data(), m, p, d),
                linalg::matmul(y.data(), query.data(), n, q, d),
                d,
            )
        }
    };
    let row_bias = linalg::matmul(x.data(), &xi.mu, m, p, 1);
    let col_bias = linalg::matmul(y.data(), &xi.nu, n, q, 1);
    Ok((
        m,
        n,
        Projections {
            left,
            right,
            width,
            row_bias,
            col_bias,
        },
    ))
}

impl Projections {
    fn score(&self, i: usize, j: usize, xi: f64) -> f64 {
        let w = self.width;
        let bilinear: f64 = self.left[i * w..(i + 1) * w]
            .iter()
            .zip(&self.right[j * w..(j + 1) * w])
            .map(|(a, b)| a * b)
            .sum();
        bilinear + self.row_bias[i] + self.col_bias[j] + xi
    }
}

/// Bi-affine scores `⟨M,N⟩` for `x′: ⟨M,P′⟩` and `y′: ⟨N,Q′⟩`.
pub fn biaffine_attention(x: &DenseTensor, y: &DenseTensor, xi: &BiaffineParams) -> Result<DenseTensor> {
    let (m, n, pr) = project(x, y, xi)?;
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            out.push(pr.score(i, j, xi.xi));
        }
    }
    DenseTensor::matrix(m, n, out)
}

/// Bi-affine scores evaluated only on the cells the mask allows; all other
/// cells are `−∞`.
pub fn biaffine_attention_masked(
    x: &DenseTensor,
    y: &DenseTensor,
    xi: &BiaffineParams,
    mask: &Mask,
) -> Result<DenseTensor> {
    let (m, n, pr) = project(x, y, xi)?;
    mask.check_dims(m, n)?;
    let mut out = vec![f64::NEG_INFINITY; m * n];
    for (i, row) in mask.allowed.iter().enumerate() {
        for &j in row {
            out[i * n + j] = pr.score(i, j, xi.xi);
        }
    }
    DenseTensor::matrix(m, n, out)
}

/// Log-domain mask with entries `0` (allowed) or `−∞`, stored as the allowed
/// columns of each row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<Vec<usize>>,
}

impl Mask {
    pub fn allow_all(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            allowed: vec![(0..cols).collect(); rows],
        }
    }

    /// From 0-based `(row, col)` pairs.
    pub fn from_allowed(rows: usize, cols: usize, cells: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut allowed = vec![Vec::new(); rows];
        for (r, c) in cells {
            if r >= rows || c >= cols {
                return Err(Error::Index(format!(
                    "mask cell ({}, {}) outside <{rows},{cols}>",
                    r + 1,
                    c + 1
                )));
            }
            allowed[r].push(c);
        }
        for row in &mut allowed {
            row.sort_unstable();
            row.dedup();
        }
        Ok(Mask { rows, cols, allowed })
    }

    /// Input `m` may influence output `n` only when `m ≤ n`.
    pub fn causal(n: usize) -> Self {
        Mask {
            rows: n,
            cols: n,
            allowed: (0..n).map(|m| (m..n).collect()).collect(),
        }
    }

    /// Allows `(u, v)` for every edge `u → v`, taken verbatim (no self-loops added).
    pub fn from_graph(g: &Graph) -> Self {
        let cells = g.edges().iter().map(|e| (e.u - 1, e.v - 1));
        Mask::from_allowed(g.n(), g.n(), cells).expect("graph edges are in range")
    }

    /// Reads a dense log-domain matrix whose entries must be exactly `0` or `−∞`.
    pub fn from_log_dense(h: &DenseTensor) -> Result<Self> {
        let (rows, cols) = h.matrix_dims()?;
        let mut cells = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                match h.at2(r, c) {
                    v if v == 0.0 => cells.push((r, c)),
                    v if v == f64::NEG_INFINITY => {}
                    v => {
                        return Err(Error::Argument(format!(
                            "mask entry ({}, {}) is {v}, expected 0 or -inf",
                            r + 1,
                            c + 1
                        )))
                    }
                }
            }
        }
        Mask::from_allowed(rows, cols, cells)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_allowed(&self, r: usize, c: usize) -> bool {
        self.allowed[r].binary_search(&c).is_ok()
    }

    pub fn allowed_count(&self) -> usize {
        self.allowed.iter().map(Vec::len).sum()
    }

    /// 0-based allowed cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.allowed
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&c| (r, c)))
    }

    pub fn to_log_dense(&self) -> DenseTensor {
        let mut data = vec![f64::NEG_INFINITY; self.rows * self.cols];
        for (r, c) in self.cells() {
            data[r * self.cols + c] = 0.0;
        }
        DenseTensor::matrix(self.rows, self.cols, data).expect("positive dims")
    }

    fn check_dims(&self, m: usize, n: usize) -> Result<()> {
        if (self.rows, self.cols) != (m, n) {
            return shape_err(format!(
                "mask is <{},{}> but the scores are <{m},{n}>",
                self.rows, self.cols
            ));
        }
        Ok(())
    }
}

/// `scores + H`: masked cells become `−∞`.
pub fn apply_mask(scores: &DenseTensor, mask: &Mask) -> Result<DenseTensor> {
    let (m, n) = scores.matrix_dims()?;
    mask.check_dims(m, n)?;
    let mut out = vec![f64::NEG_INFINITY; m * n];
    for (r, c) in mask.cells() {
        out[r * n + c] = scores.at2(r, c);
    }
    DenseTensor::matrix(m, n, out)
}

fn softmax_in_place(values: &mut [f64]) -> bool {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        values.iter_mut().for_each(|v| *v = 0.0);
        return false;
    }
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    values.iter_mut().for_each(|v| *v /= sum);
    true
}

/// Softmax down each column, plus the 0-based columns that were entirely `−∞`
/// (and are returned as zeros).
pub fn softmax_columns_flagged(scores: &DenseTensor) -> Result<(DenseTensor, Vec<usize>)> {
    let (m, n) = scores.matrix_dims()?;
    let mut out = scores.data().to_vec();
    let mut empty = Vec::new();
    let mut col = vec![0.0; m];
    for j in 0..n {
        for i in 0..m {
            col[i] = out[i * n + j];
        }
        if !softmax_in_place(&mut col) {
            empty.push(j);
        }
        for i in 0..m {
            out[i * n + j] = col[i];
        }
    }
    Ok((DenseTensor::matrix(m, n, out)?, empty))
}

pub fn softmax_columns(scores: &DenseTensor) -> Result<DenseTensor> {
    softmax_columns_flagged(scores).map(|(s, _)| s)
}

/// Softmax along each row, plus the 0-based rows that were entirely `−∞`.
pub fn softmax_rows_flagged(scores: &DenseTensor) -> Result<(DenseTensor, Vec<usize>)> {
    let (m, n) = scores.matrix_dims()?;
    let mut out = scores.data().to_vec();
    let mut empty = Vec::new();
    for (i, row) in out.chunks_mut(n).enumerate() {
        if !softmax_in_place(row) {
            empty.push(i);
        }
    }
    Ok((DenseTensor::matrix(m, n, out)?, empty))
}

pub fn softmax_rows(scores: &DenseTensor) -> Result<DenseTensor> {
    softmax_rows_flagged(scores).map(|(s, _)| s)
}

fn check_slope(slope: f64) -> Result<()> {
    if !(slope > 0.0 && slope < 1.0) {
        return Err(Error::Argument(format!("leaky ReLU slope must lie in (0, 1), got {slope}")));
    }
    Ok(())
}

/// `x` for `x ≥ 0`, `slope·x` otherwise; `−∞` stays `−∞`.
pub fn leaky_relu(scores: &DenseTensor, slope: f64) -> Result<DenseTensor> {
    check_slope(slope)?;
    let data = scores
        .data()
        .iter()
        .map(|&v| if v >= 0.0 { v } else { slope * v })
        .collect();
    DenseTensor::new(scores.shape().clone(), data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    AddMask,
    LeakyRelu(f64),
    SoftmaxColumns,
    SoftmaxRows,
    /// Multiplies every score by a positive constant.
    Scale(f64),
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::AddMask => f.write_str("mask"),
            Step::LeakyRelu(s) => write!(f, "leaky-relu:{s}"),
            Step::SoftmaxColumns => f.write_str("softmax-columns"),
            Step::SoftmaxRows => f.write_str("softmax-rows"),
            Step::Scale(c) => write!(f, "scale:{c}"),
        }
    }
}

impl FromStr for Step {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let number = |a: Option<&str>| -> Result<Option<f64>> {
            a.map(|a| {
                a.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number '{a}' in pipeline step '{s}'")))
            })
            .transpose()
        };
        let step = match name {
            "mask" | "add-mask" => Step::AddMask,
            "leaky-relu" => Step::LeakyRelu(number(arg)?.unwrap_or(DEFAULT_LEAKY_SLOPE)),
            "softmax-columns" | "softmax" => Step::SoftmaxColumns,
            "softmax-rows" => Step::SoftmaxRows,
            "scale" => Step::Scale(
                number(arg)?.ok_or_else(|| Error::Parse("scale step needs a value, e.g. scale:0.5".into()))?,
            ),
            _ => return Err(Error::Parse(format!("unknown pipeline step '{s}'"))),
        };
        Ok(step)
    }
}

/// Ordered masking and normalisation steps applied to raw scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalisationPipeline {
    steps: Vec<Step>,
}

/// A normalised head and the 0-based columns (or rows, for a row softmax)
/// that were fully masked.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalised {
    pub matrix: DenseTensor,
    pub fully_masked: Vec<usize>,
}

impl NormalisationPipeline {
    pub fn new(steps: Vec<Step>) -> Result<Self> {
        let softmaxes: Vec<usize> = steps
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, Step::SoftmaxColumns | Step::SoftmaxRows))
            .map(|(i, _)| i)
            .collect();
        if softmaxes.len() > 1 {
            return Err(Error::Argument("a pipeline allows at most one softmax".into()));
        }
        let masks: Vec<usize> = steps
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Step::AddMask)
            .map(|(i, _)| i)
            .collect();
        if masks.len() > 1 {
            return Err(Error::Argument("a pipeline allows at most one mask step".into()));
        }
        if let (Some(&mi), Some(&si)) = (masks.first(), softmaxes.first()) {
            if mi > si {
                return Err(Error::Argument("the mask step must precede the softmax".into()));
            }
        }
        for s in &steps {
            match *s {
                Step::LeakyRelu(slope) => check_slope(slope)?,
                Step::Scale(c) if !(c > 0.0 && c.is_finite()) => {
                    return Err(Error::Argument(format!("scale must be positive and finite, got {c}")))
                }
                _ => {}
            }
        }
        Ok(NormalisationPipeline { steps })
    }

    pub fn parse(steps: &[impl AsRef<str>]) -> Result<Self> {
        Self::new(steps.iter().map(|s| s.as_ref().parse()).collect::<Result<_>>()?)
    }

    /// Mask, leaky ReLU, column softmax.
    pub fn graph_attention(slope: f64) -> Result<Self> {
        Self::new(vec![Step::AddMask, Step::LeakyRelu(slope), Step::SoftmaxColumns])
    }

    /// Scale, optional mask, column softmax.
    pub fn scaled_dot_product(scale: f64, masked: bool) -> Result<Self> {
        let mut steps = vec![Step::Scale(scale)];
        if masked {
            steps.push(Step::AddMask);
        }
        steps.push(Step::SoftmaxColumns);
        Self::new(steps)
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn has_mask(&self) -> bool {
        self.steps.contains(&Step::AddMask)
    }

    /// Runs the steps in order. The mask step needs `mask`.
    pub fn apply(&self, scores: DenseTensor, mask: Option<&Mask>) -> Result<Normalised> {
        let mut s = scores;
        let mut fully_masked = Vec::new();
        for step in &self.steps {
            s = match *step {
                Step::AddMask => {
                    let mask = mask.ok_or_else(|| Error::Argument("pipeline has a mask step but no mask was given".into()))?;
                    apply_mask(&s, mask)?
                }
                Step::LeakyRelu(slope) => leaky_relu(&s, slope)?,
                Step::Scale(c) => s.scaled(c),
                Step::SoftmaxColumns => {
                    let (out, empty) = softmax_columns_flagged(&s)?;
                    fully_masked = empty;
                    out
                }
                Step::SoftmaxRows => {
                    let (out, empty) = softmax_rows_flagged(&s)?;
                    fully_masked = empty;
                    out
                }
            };
        }
        Ok(Normalised { matrix: s, fully_masked })
    }
}

impl fmt::Display for NormalisationPipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.steps.iter().map(Step::to_string).collect();
        f.write_str(&names.join(","))
    }
}
