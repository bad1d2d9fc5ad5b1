//! Batched evaluation `Y_b = Σ_k A_kᵀ X_b Θ_k` along the three contraction
//! orders, with a multiply-add cost model to choose between them.
//!
//! * green (via-basis-first): `T_bknp = Σ_m A_kmn X_bmp`, then `Y = Σ_kp T Θ`.
//! * blue (via-dense-phi): `Φ_mnpq = Σ_k A_kmn Θ_kpq`, then `Y = Σ_mp X Φ`.
//! * red (via-params-first): `R_bkmq = Σ_p X_bmp Θ_kpq`, then `Y = Σ_km A R`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::{
    accumulate_basis_first, apply_phi_slice, check_conv_dims, materialize_phi_counted, BasisStack,
    ConvParams, DEFAULT_PHI_CAP,
};
use crate::error::{shape_err, Error, Result};
use crate::linalg;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContractionPath {
    /// Green: contract the basis with the input first.
    ViaBasisFirst,
    /// Blue: materialise `Φ` from basis and parameters first.
    ViaDensePhi,
    /// Red: contract the input with the parameters first.
    ViaParamsFirst,
}

impl ContractionPath {
    pub const ALL: [ContractionPath; 3] = [
        ContractionPath::ViaBasisFirst,
        ContractionPath::ViaDensePhi,
        ContractionPath::ViaParamsFirst,
    ];

    pub fn colour(self) -> &'static str {
        match self {
            ContractionPath::ViaBasisFirst => "green",
            ContractionPath::ViaDensePhi => "blue",
            ContractionPath::ViaParamsFirst => "red",
        }
    }
}

impl fmt::Display for ContractionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.colour())
    }
}

impl FromStr for ContractionPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "green" | "via-basis-first" => Ok(ContractionPath::ViaBasisFirst),
            "blue" | "via-dense-phi" => Ok(ContractionPath::ViaDensePhi),
            "red" | "via-params-first" => Ok(ContractionPath::ViaParamsFirst),
            other => Err(Error::Argument(format!("unknown contraction path '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PathChoice {
    #[default]
    Auto,
    Fixed(ContractionPath),
}

impl FromStr for PathChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            Ok(PathChoice::Auto)
        } else {
            s.parse().map(PathChoice::Fixed)
        }
    }
}

/// Dimensions that drive the cost model. `nnz` counts stored basis entries
/// summed over all `K` matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContractionDims {
    pub b: usize,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub nnz: usize,
}

impl ContractionDims {
    pub fn of(a: &BasisStack, batch: usize, theta: &ConvParams) -> Self {
        ContractionDims {
            b: batch,
            m: a.m(),
            n: a.n(),
            p: theta.p(),
            q: theta.q(),
            k: a.k(),
            nnz: a.nnz(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ContractionDims { b, m, n, p, q, k, nnz } = *self;
        if [b, m, n, p, q, k].contains(&0) {
            return Err(Error::Argument(format!("all dimensions must be ≥ 1: {self:?}")));
        }
        if nnz as u128 > k as u128 * m as u128 * n as u128 {
            return Err(Error::Argument(format!("nnz = {nnz} exceeds K·M·N")));
        }
        Ok(())
    }
}

/// Multiply-add counts of the three paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathCosts {
    pub green: u128,
    pub blue: u128,
    pub red: u128,
}

impl PathCosts {
    pub fn of(d: &ContractionDims) -> Self {
        let [b, m, n, p, q, k, nnz] = [d.b, d.m, d.n, d.p, d.q, d.k, d.nnz].map(|v| v as u128);
        PathCosts {
            green: b * p * nnz + b * k * n * p * q,
            blue: nnz * p * q + b * m * n * p * q,
            red: b * k * m * p * q + b * q * nnz,
        }
    }

    pub fn get(&self, path: ContractionPath) -> u128 {
        match path {
            ContractionPath::ViaBasisFirst => self.green,
            ContractionPath::ViaDensePhi => self.blue,
            ContractionPath::ViaParamsFirst => self.red,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractionPlan {
    pub path: ContractionPath,
    /// Multiply-adds the chosen path performs.
    pub estimate: u128,
    pub costs: PathCosts,
    /// Shape of the order-4 intermediate the path builds.
    pub intermediate: Vec<usize>,
}

/// Picks the cheapest path; ties resolve green, then red, then blue.
pub fn plan_contraction(dims: &ContractionDims) -> ContractionPlan {
    let costs = PathCosts::of(dims);
    let path = [
        ContractionPath::ViaBasisFirst,
        ContractionPath::ViaParamsFirst,
        ContractionPath::ViaDensePhi,
    ]
    .into_iter()
    .min_by_key(|&p| costs.get(p))
    .expect("three candidates");
    plan_for_path(dims, path)
}

pub fn plan_for_path(dims: &ContractionDims, path: ContractionPath) -> ContractionPlan {
    let costs = PathCosts::of(dims);
    let d = dims;
    let intermediate = match path {
        ContractionPath::ViaBasisFirst => vec![d.b, d.k, d.n, d.p],
        ContractionPath::ViaDensePhi => vec![d.m, d.n, d.p, d.q],
        ContractionPath::ViaParamsFirst => vec![d.b, d.k, d.m, d.q],
    };
    ContractionPlan {
        path,
        estimate: costs.get(path),
        costs,
        intermediate,
    }
}

/// Output of an instrumented batched convolution.
#[derive(Debug, Clone)]
pub struct Execution {
    pub output: DenseTensor,
    pub plan: ContractionPlan,
    /// Multiply-adds actually executed.
    pub multiply_adds: u64,
}

/// `Y_b = Σ_k A_kᵀ X_b Θ_k` for `X: ⟨B,M,P⟩`, giving `Y: ⟨B,N,Q⟩`.
pub fn convolve_batched(
    a: &BasisStack,
    x: &DenseTensor,
    theta: &ConvParams,
    choice: PathChoice,
) -> Result<DenseTensor> {
    execute_batched(a, x, theta, choice).map(|e| e.output)
}

/// As [`convolve_batched`], also reporting the plan and the counted work.
///
/// Batch slices run in parallel; each slice has a fixed accumulation order, so
/// the output does not depend on the thread count.
pub fn execute_batched(
    a: &BasisStack,
    x: &DenseTensor,
    theta: &ConvParams,
    choice: PathChoice,
) -> Result<Execution> {
    let (b, m, p) = match *x.dims() {
        [b, m, p] => (b, m, p),
        _ => {
            return shape_err(format!(
                "batched input must have shape <B,M,P>, got {}",
                x.shape()
            ))
        }
    };
    check_conv_dims(a, m, p, theta)?;
    let dims = ContractionDims::of(a, b, theta);
    let plan = match choice {
        PathChoice::Auto => plan_contraction(&dims),
        PathChoice::Fixed(path) => plan_for_path(&dims, path),
    };
    let (n, q) = (a.n(), theta.q());
    let mut y = vec![0.0; b * n * q];
    let x_slices = x.data().par_chunks(m * p);
    let y_slices = y.par_chunks_mut(n * q);

    let multiply_adds = match plan.path {
        ContractionPath::ViaBasisFirst => x_slices
            .zip(y_slices)
            .map(|(xs, ys)| accumulate_basis_first(a, xs, theta, ys))
            .sum(),
        ContractionPath::ViaParamsFirst => x_slices
            .zip(y_slices)
            .map(|(xs, ys)| accumulate_params_first(a, xs, theta, ys))
            .sum(),
        ContractionPath::ViaDensePhi => {
            let (phi, build) = materialize_phi_counted(a, theta, DEFAULT_PHI_CAP)?;
            let apply: u64 = x_slices
                .zip(y_slices)
                .map(|(xs, ys)| apply_phi_slice(phi.data(), xs, ys, m, n, p, q))
                .sum();
            build + apply
        }
    };
    Ok(Execution {
        output: DenseTensor::from_dims(&[b, n, q], y)?,
        plan,
        multiply_adds,
    })
}

fn accumulate_params_first(a: &BasisStack, x: &[f64], theta: &ConvParams, out: &mut [f64]) -> u64 {
    let (m, p, q) = (a.m(), theta.p(), theta.q());
    let mut r = vec![0.0; m * q];
    let mut count = 0;
    for (k, ak) in a.matrices().iter().enumerate() {
        r.iter_mut().for_each(|v| *v = 0.0);
        count += linalg::gemm_acc(x, theta.block(k), &mut r, m, p, q);
        count += ak.transpose_mul_acc(&r, q, out);
    }
    count
}
