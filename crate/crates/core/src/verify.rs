//! Randomised property suite.
//!
//! Every property draws its instances from an [`InstanceRng`] seeded from the
//! suite seed and the property name, so a run is reproducible and filtering
//! with `only` does not change the instances of the properties that remain.

use crate::attention::{
    apply_mask, attention_convolve, biaffine_attention, concat_project, default_scale, softmax_columns_flagged,
    transformer_head, transformer_theta, AttentionConvSpec, BiaffineParams, Head, Lambda, Mask,
    NormalisationPipeline, Step, Wiring,
};
use crate::basis::{
    chebyshev_basis, cuboid_offsets, gcn_basis, grid_basis, random_walk_basis, scaled_laplacian, shift_matrix,
    Edge, Graph, GridSpec, KernelSpec,
};
use crate::conv::{
    apply_dense_phi, compose, convolve, execute_batched, materialize_phi, BasisStack, ContractionPath, ConvParams,
    PathChoice,
};
use crate::error::Result;
use crate::linalg;
use crate::reduction::{
    convolve_controlled, convolve_depthwise, convolve_grouped, expand_controlled_separable, expand_depthwise,
    expand_grouped, parameter_count, ChannelFactor, ControlledSeparableParams, DepthwiseParams, GroupedParams,
    Scheme,
};
use crate::rng::InstanceRng;
use crate::sparse::SparseMatrix;
use crate::tensor::{
    canonical_index, canonical_multi_index, mixed_product, numerical_rank, solve_basis_coefficients, DenseTensor,
    MultiIndex, Shape,
};

#[derive(Debug, Clone, Default)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Replaces the tolerance of every floating-point property.
    pub tolerance: Option<f64>,
    /// Property names or groups to run; empty runs everything.
    pub only: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub group: &'static str,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub instances: usize,
    /// Set when an instance raised an error instead of producing a number.
    pub failure: Option<String>,
}

struct Measured {
    max_error: f64,
    instances: usize,
}

impl Measured {
    fn new() -> Self {
        Measured {
            max_error: 0.0,
            instances: 0,
        }
    }

    fn record(&mut self, err: f64) {
        self.instances += 1;
        // NaN must fail the property
        if err.is_nan() || err > self.max_error {
            self.max_error = if err.is_nan() { f64::INFINITY } else { err };
        }
    }
}

type Check = fn(&mut InstanceRng) -> Result<Measured>;

struct Property {
    name: &'static str,
    group: &'static str,
    /// `0` for exact properties, which `--tol` leaves alone.
    tolerance: f64,
    check: Check,
}

const PROPERTIES: &[Property] = &[
    Property { name: "bijection", group: "tensor", tolerance: 0.0, check: bijection },
    Property { name: "factorisation", group: "factorisation", tolerance: 1e-12, check: factorisation },
    Property { name: "inversion", group: "inversion", tolerance: 1e-9, check: inversion },
    Property { name: "composition", group: "composition", tolerance: 1e-10, check: composition },
    Property { name: "path-agreement", group: "paths", tolerance: 1e-10, check: path_agreement },
    Property { name: "path-counts", group: "paths", tolerance: 0.0, check: path_counts },
    Property { name: "rank-bound", group: "rank", tolerance: 0.0, check: rank_bound },
    Property { name: "shift-composition", group: "grid", tolerance: 0.0, check: shift_composition },
    Property { name: "cnn-equivalence", group: "grid", tolerance: 1e-12, check: cnn_equivalence },
    Property { name: "translation-equivariance", group: "grid", tolerance: 0.0, check: translation_equivariance },
    Property { name: "chebyshev-recurrence", group: "graph", tolerance: 1e-10, check: chebyshev_recurrence },
    Property { name: "walk-powers", group: "graph", tolerance: 1e-10, check: walk_powers },
    Property { name: "gcn-symmetric-unit", group: "graph", tolerance: 0.0, check: gcn_symmetric_unit },
    Property { name: "softmax-columns", group: "attention", tolerance: 1e-12, check: softmax_columns_sum },
    Property { name: "mask-sparsity", group: "attention", tolerance: 0.0, check: mask_sparsity },
    Property { name: "factorised-head", group: "attention", tolerance: 1e-12, check: factorised_head },
    Property { name: "concat-project", group: "attention", tolerance: 1e-12, check: concat_project_sum },
    Property { name: "attention-linearity", group: "attention", tolerance: 1e-12, check: attention_linearity },
    Property { name: "degeneracy", group: "degeneracy", tolerance: 0.0, check: degeneracy },
    Property { name: "parameter-counts", group: "reduction", tolerance: 0.0, check: parameter_counts },
    Property { name: "reduced-evaluation", group: "reduction", tolerance: 1e-11, check: reduced_evaluation },
];

/// Names and groups accepted by [`SuiteConfig::only`].
pub fn property_names() -> Vec<(&'static str, &'static str)> {
    PROPERTIES.iter().map(|p| (p.name, p.group)).collect()
}

fn property_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed with the suite seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn run_suite(config: &SuiteConfig) -> Vec<PropertyResult> {
    PROPERTIES
        .iter()
        .filter(|p| {
            config.only.is_empty() || config.only.iter().any(|o| o == p.name || o == p.group)
        })
        .map(|p| {
            let tolerance = match config.tolerance {
                Some(t) if p.tolerance > 0.0 => t,
                _ => p.tolerance,
            };
            let mut rng = InstanceRng::new(property_seed(config.seed, p.name));
            match (p.check)(&mut rng) {
                Ok(m) => PropertyResult {
                    name: p.name,
                    group: p.group,
                    passed: m.max_error <= tolerance,
                    max_error: m.max_error,
                    tolerance,
                    instances: m.instances,
                    failure: None,
                },
                Err(e) => PropertyResult {
                    name: p.name,
                    group: p.group,
                    passed: false,
                    max_error: f64::INFINITY,
                    tolerance,
                    instances: 0,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect()
}

fn random_basis(rng: &mut InstanceRng, k: usize, m: usize, n: usize, density: f64) -> BasisStack {
    let mats = (0..k)
        .map(|_| SparseMatrix::from_dense(&rng.sparse_matrix(m, n, density)).expect("matrix"))
        .collect();
    BasisStack::new(mats).expect("uniform dims")
}

fn random_graph(rng: &mut InstanceRng, n: usize, density: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 1..=n {
        for v in 1..=n {
            if u != v && rng.chance(density) {
                edges.push(Edge::new(u, v, rng.unit()));
            }
        }
    }
    Graph::new(n, edges).expect("valid edges")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rel_diff(a: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    max_abs_diff(a, reference) / scale
}

fn bijection(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..50 {
        let rank = rng.range(1, 4);
        let dims: Vec<usize> = (0..rank).map(|_| rng.range(1, 5)).collect();
        let shape = Shape::new(dims.clone())?;
        let mut errors = 0;
        for k in 1..=shape.cardinality() {
            let idx = canonical_multi_index(&shape, k)?;
            // row-major: the last coordinate varies fastest
            let expect = idx
                .coords()
                .iter()
                .zip(&dims)
                .fold(0, |acc, (&c, &d)| acc * d + (c - 1))
                + 1;
            if canonical_index(&shape, &MultiIndex::new(idx.coords().to_vec()))? != k || expect != k {
                errors += 1;
            }
        }
        m.record(errors as f64);
    }
    Ok(m)
}

fn factorisation(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..100 {
        let (k, mm, n, p, q) = (rng.range(1, 6), rng.range(1, 8), rng.range(1, 8), rng.range(1, 5), rng.range(1, 5));
        let a = random_basis(rng, k, mm, n, 0.4);
        let theta = ConvParams::new(rng.tensor(&[k, p, q]))?;
        let x = rng.tensor(&[mm, p]);
        let y = convolve(&a, &x, &theta)?;
        let dense = apply_dense_phi(&materialize_phi(&a, &theta)?, &x)?;
        m.record(max_abs_diff(y.data(), dense.data()));
    }
    Ok(m)
}

/// 1-norm condition number via an explicit inverse.
fn condition_1(a: &[f64], n: usize) -> f64 {
    let eye = DenseTensor::identity(n).expect("n ≥ 1");
    let Ok(inv) = linalg::solve(a, n, eye.data(), n) else {
        return f64::INFINITY;
    };
    let norm1 = |m: &[f64]| {
        (0..n)
            .map(|c| (0..n).map(|r| m[r * n + c].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    norm1(a) * norm1(&inv)
}

fn inversion(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    while m.instances < 50 {
        let rank = rng.range(1, 3);
        let s: Vec<usize> = (0..rank).map(|_| rng.range(1, 4)).collect();
        let card: usize = s.iter().product();
        if card > 16 {
            continue;
        }
        let a = rng.tensor(&[&[card][..], &s].concat());
        // keep the 2-norm condition below 1e6: κ₂ ≤ n·κ₁
        if condition_1(a.data(), card) * card as f64 >= 1e6 {
            continue;
        }
        let t: Vec<usize> = (0..rng.range(1, 2)).map(|_| rng.range(1, 3)).collect();
        let phi = rng.tensor(&[&s[..], &t].concat());
        let theta = solve_basis_coefficients(&a, &phi)?;
        let back = mixed_product(&a, &theta)?;
        m.record(rel_diff(back.data(), phi.data()));
    }
    Ok(m)
}

fn composition(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for i in 0..100 {
        let m1 = rng.range(1, 7);
        // every other pair is forced non-square
        let n1 = if i % 2 == 0 { m1 % 7 + 1 } else { rng.range(1, 7) };
        let n2 = rng.range(1, 7);
        let (k1, k2) = (rng.range(1, 4), rng.range(1, 4));
        let (p, r, q) = (rng.range(1, 4), rng.range(1, 4), rng.range(1, 4));
        let a1 = random_basis(rng, k1, m1, n1, 0.5);
        let a2 = random_basis(rng, k2, n1, n2, 0.5);
        let t1 = ConvParams::new(rng.tensor(&[k1, p, r]))?;
        let t2 = ConvParams::new(rng.tensor(&[k2, r, q]))?;
        let x = rng.tensor(&[m1, p]);
        let (a, t) = compose(&a1, &t1, &a2, &t2)?;
        let fused = convolve(&a, &x, &t)?;
        let seq = convolve(&a2, &convolve(&a1, &x, &t1)?, &t2)?;
        m.record(rel_diff(fused.data(), seq.data()));
    }
    Ok(m)
}

fn batch_instance(rng: &mut InstanceRng) -> Result<(BasisStack, DenseTensor, ConvParams)> {
    let (b, k, mm, n, p, q) = (
        rng.range(1, 4),
        rng.range(1, 5),
        rng.range(1, 7),
        rng.range(1, 7),
        rng.range(1, 4),
        rng.range(1, 4),
    );
    let density = rng.unit();
    let a = random_basis(rng, k, mm, n, density);
    let theta = ConvParams::new(rng.tensor(&[k, p, q]))?;
    Ok((a, rng.tensor(&[b, mm, p]), theta))
}

fn path_agreement(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..100 {
        let (a, x, theta) = batch_instance(rng)?;
        let outs = ContractionPath::ALL
            .iter()
            .map(|&p| execute_batched(&a, &x, &theta, PathChoice::Fixed(p)).map(|e| e.output))
            .collect::<Result<Vec<_>>>()?;
        let worst = outs[1..]
            .iter()
            .map(|o| rel_diff(o.data(), outs[0].data()))
            .fold(0.0, f64::max);
        m.record(worst);
    }
    Ok(m)
}

fn path_counts(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..100 {
        let (a, x, theta) = batch_instance(rng)?;
        let mut mismatches = 0u32;
        for &p in ContractionPath::ALL.iter() {
            let e = execute_batched(&a, &x, &theta, PathChoice::Fixed(p))?;
            if e.multiply_adds as u128 != e.plan.estimate {
                mismatches += 1;
            }
        }
        m.record(mismatches as f64);
    }
    Ok(m)
}

/// Random `⟨rows, cols⟩` matrix of rank at most `r` as a product of factors.
fn low_rank(rng: &mut InstanceRng, rows: usize, cols: usize, r: usize) -> DenseTensor {
    let u = rng.tensor(&[rows, r]);
    let v = rng.tensor(&[r, cols]);
    DenseTensor::matrix(rows, cols, linalg::matmul(u.data(), v.data(), rows, r, cols)).expect("positive dims")
}

fn rank_bound(rng: &mut InstanceRng) -> Result<Measured> {
    const TOL: f64 = 1e-9;
    let mut m = Measured::new();
    for i in 0..100 {
        let k = rng.range(1, 4);
        let (s1, s2, t1, t2) = if i % 4 == 0 {
            // vectors: a ∘ b is an S×T matrix of rank at most K
            (rng.range(1, 8), 1, rng.range(1, 8), 1)
        } else {
            (rng.range(1, 4), rng.range(1, 4), rng.range(1, 4), rng.range(1, 4))
        };
        let mut a_data = Vec::new();
        let mut b_data = Vec::new();
        let mut bound = 0;
        for _ in 0..k {
            let (ra, rb) = (rng.range(1, s1.min(s2)), rng.range(1, t1.min(t2)));
            let ak = low_rank(rng, s1, s2, ra);
            let bk = low_rank(rng, t1, t2, rb);
            bound += numerical_rank(&ak, TOL)? * numerical_rank(&bk, TOL)?;
            a_data.extend_from_slice(ak.data());
            b_data.extend_from_slice(bk.data());
        }
        let a = DenseTensor::from_dims(&[k, s1, s2], a_data)?;
        let b = DenseTensor::from_dims(&[k, t1, t2], b_data)?;
        let ab = mixed_product(&a, &b)?; // ⟨s1,s2,t1,t2⟩
        // matricise as (s1·t1) × (s2·t2)
        let mut mat = vec![0.0; s1 * t1 * s2 * t2];
        for i1 in 0..s1 {
            for i2 in 0..s2 {
                for j1 in 0..t1 {
                    for j2 in 0..t2 {
                        let v = ab.data()[((i1 * s2 + i2) * t1 + j1) * t2 + j2];
                        mat[(i1 * t1 + j1) * (s2 * t2) + i2 * t2 + j2] = v;
                    }
                }
            }
        }
        let r = numerical_rank(&DenseTensor::matrix(s1 * t1, s2 * t2, mat)?, TOL)?;
        m.record(if r > bound { 1.0 } else { 0.0 });
    }
    Ok(m)
}

fn shift_composition(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..50 {
        let (h, w) = (rng.range(1, 8), rng.range(1, 8));
        let g = GridSpec::from_dims(&[h, w])?;
        let d = [rng.range_i64(-3, 3), rng.range_i64(-3, 3)];
        let e = [rng.range_i64(-3, 3), rng.range_i64(-3, 3)];
        let prod = shift_matrix(&g, &d)?.matmul(&shift_matrix(&g, &e)?)?;
        let sum = shift_matrix(&g, &[d[0] + e[0], d[1] + e[1]])?;
        let mut bad = 0;
        for (mm, n, _) in sum.iter() {
            let (i, j) = ((mm / w) as i64 + d[0], (mm % w) as i64 + d[1]);
            let inside = (0..h as i64).contains(&i) && (0..w as i64).contains(&j);
            if prod.get(mm, n) != if inside { 1.0 } else { 0.0 } {
                bad += 1;
            }
        }
        if prod.iter().any(|(a, b, _)| sum.get(a, b) != 1.0) {
            bad += 1;
        }
        m.record(bad as f64);
    }
    Ok(m)
}

/// `y[s] = Σ_k x[s − Δ_k] θ_k` by direct loops over a 2-D single-channel image.
fn correlate_2d(x: &[f64], h: usize, w: usize, kern: &[f64], offsets: &[Vec<i64>]) -> Vec<f64> {
    let mut y = vec![0.0; h * w];
    for i in 0..h as i64 {
        for j in 0..w as i64 {
            let mut acc = 0.0;
            for (kk, d) in offsets.iter().enumerate() {
                let (si, sj) = (i - d[0], j - d[1]);
                if (0..h as i64).contains(&si) && (0..w as i64).contains(&sj) {
                    acc += x[si as usize * w + sj as usize] * kern[kk];
                }
            }
            y[i as usize * w + j as usize] = acc;
        }
    }
    y
}

fn cnn_equivalence(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..20 {
        let (h, w) = (rng.range(1, 12), rng.range(1, 12));
        let sizes = vec![rng.range(1, 5), rng.range(1, 5)];
        let spec = if rng.chance(0.5) {
            KernelSpec::centered(sizes)?
        } else {
            let strides = vec![rng.range(1, 2), rng.range(1, 2)];
            let offsets = vec![rng.range_i64(-6, 1), rng.range_i64(-6, 1)];
            KernelSpec::new(sizes, strides, offsets)?
        };
        let a = grid_basis(&GridSpec::from_dims(&[h, w])?, &spec)?;
        let x = rng.tensor(&[h * w, 1]);
        let kern = rng.tensor(&[spec.size(), 1, 1]);
        let y = convolve(&a, &x, &ConvParams::new(kern.clone())?)?;
        let expect = correlate_2d(x.data(), h, w, kern.data(), &cuboid_offsets(&spec));
        m.record(max_abs_diff(y.data(), &expect));
    }
    Ok(m)
}

fn translation_equivariance(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..20 {
        let ks = 2 * rng.range(0, 2) + 1;
        let half = (ks / 2) as i64;
        let (ti, tj) = (rng.range_i64(-2, 2), rng.range_i64(-2, 2));
        let margin = half + ti.abs().max(tj.abs());
        let lo = 2 * margin as usize + 1;
        let (h, w) = (rng.range(lo, lo + 6), rng.range(lo, lo + 6));
        let spec = KernelSpec::centered(vec![ks, ks])?;
        let a = grid_basis(&GridSpec::from_dims(&[h, w])?, &spec)?;
        let theta = ConvParams::new(rng.tensor(&[ks * ks, 2, 2]))?;
        let x = rng.tensor(&[h * w, 2]);
        let mut xs = vec![0.0; h * w * 2];
        for i in 0..h as i64 {
            for j in 0..w as i64 {
                let (si, sj) = (i - ti, j - tj);
                if (0..h as i64).contains(&si) && (0..w as i64).contains(&sj) {
                    let (to, from) = ((i as usize * w + j as usize) * 2, (si as usize * w + sj as usize) * 2);
                    xs[to..to + 2].copy_from_slice(&x.data()[from..from + 2]);
                }
            }
        }
        let y = convolve(&a, &x, &theta)?;
        let ys = convolve(&a, &DenseTensor::matrix(h * w, 2, xs)?, &theta)?;
        let mut err: f64 = 0.0;
        for i in margin..h as i64 - margin {
            for j in margin..w as i64 - margin {
                let s = (i as usize * w + j as usize) * 2;
                let st = ((i - ti) as usize * w + (j - tj) as usize) * 2;
                for c in 0..2 {
                    err = err.max((ys.data()[s + c] - y.data()[st + c]).abs());
                }
            }
        }
        m.record(err);
    }
    Ok(m)
}

fn chebyshev_recurrence(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..30 {
        let n = rng.range(1, 20);
        let density = rng.unit() * 0.5;
        let g = random_graph(rng, n, density);
        let a = chebyshev_basis(&g, 6)?;
        let (lt, _) = scaled_laplacian(&g);
        let mut err: f64 = 0.0;
        for k in 2..6 {
            let prev = a.matrices()[k - 1].to_dense();
            let prev2 = a.matrices()[k - 2].to_dense();
            let lp = linalg::matmul(lt.data(), prev.data(), n, n, n);
            let expect: Vec<f64> = lp.iter().zip(prev2.data()).map(|(x, y)| 2.0 * x - y).collect();
            err = err.max(max_abs_diff(a.matrices()[k].to_dense().data(), &expect));
        }
        m.record(err);
    }
    Ok(m)
}

fn walk_powers(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..30 {
        let n = rng.range(1, 20);
        let g = random_graph(rng, n, 0.25);
        let a = random_walk_basis(&g, 6)?;
        let a1 = a.matrices()[0].to_dense();
        let mut err: f64 = 0.0;
        for k in 1..6 {
            let expect = linalg::matmul(a.matrices()[k - 1].to_dense().data(), a1.data(), n, n, n);
            err = err.max(max_abs_diff(a.matrices()[k].to_dense().data(), &expect));
        }
        m.record(err);
    }
    Ok(m)
}

fn gcn_symmetric_unit(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..30 {
        let n = rng.range(1, 20);
        let density = rng.unit() * 0.5;
        let g = random_graph(rng, n, density);
        let a = gcn_basis(&g)?.matrices()[0].to_dense();
        let mut err: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = a.at2(i, j);
                err = err.max((v - a.at2(j, i)).abs()).max(-v).max(v - 1.0);
            }
        }
        m.record(err);
    }
    Ok(m)
}

fn random_mask(rng: &mut InstanceRng, rows: usize, cols: usize, density: f64) -> Result<Mask> {
    let mut cells = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if rng.chance(density) {
                cells.push((r, c));
            }
        }
    }
    Mask::from_allowed(rows, cols, cells)
}

fn softmax_columns_sum(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..50 {
        let (rows, cols) = (rng.range(1, 8), rng.range(1, 8));
        let scores = rng.tensor(&[rows, cols]).scaled(20.0);
        let density = rng.unit();
        let mask = random_mask(rng, rows, cols, density)?;
        let (p, empty) = softmax_columns_flagged(&apply_mask(&scores, &mask)?)?;
        let mut err: f64 = 0.0;
        for c in 0..cols {
            let sum: f64 = (0..rows).map(|r| p.at2(r, c)).sum();
            let target = if empty.contains(&c) { 0.0 } else { 1.0 };
            err = err.max((sum - target).abs());
            for r in 0..rows {
                if !mask.is_allowed(r, c) && p.at2(r, c) != 0.0 {
                    err = f64::INFINITY;
                }
            }
        }
        m.record(err);
    }
    Ok(m)
}

fn random_biaffine(rng: &mut InstanceRng, p: usize, q: usize) -> Result<BiaffineParams> {
    BiaffineParams::new(
        rng.uniform(),
        rng.tensor(&[p]).into_data(),
        rng.tensor(&[q]).into_data(),
        Lambda::Full(rng.tensor(&[p, q])),
    )
}

fn mask_sparsity(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..50 {
        let (rows, cols, p, q) = (rng.range(1, 8), rng.range(1, 8), rng.range(1, 3), rng.range(1, 3));
        let density = rng.unit();
        let mask = random_mask(rng, rows, cols, density)?;
        let xi = random_biaffine(rng, p, q)?;
        let scores = biaffine_attention(&rng.tensor(&[rows, p]), &rng.tensor(&[cols, q]), &xi)?;
        let pipeline = NormalisationPipeline::graph_attention(0.2)?;
        let out = pipeline.apply(scores, Some(&mask))?.matrix;
        let nnz = out.data().iter().filter(|v| **v != 0.0).count();
        m.record(nnz.saturating_sub(mask.allowed_count()) as f64);
    }
    Ok(m)
}

fn factorised_head(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..50 {
        let (mm, n, p, q, d) = (rng.range(1, 7), rng.range(1, 7), rng.range(1, 4), rng.range(1, 4), rng.range(1, 4));
        let (x, y) = (rng.tensor(&[mm, p]), rng.tensor(&[n, q]));
        let (key, query) = (rng.tensor(&[p, d]), rng.tensor(&[q, d]));
        let scale = default_scale(d);
        let head = transformer_head(&x, &y, &key, &query, scale, None)?;
        let lambda = Lambda::Factorised { key, query }.expanded();
        let expanded = BiaffineParams::new(0.0, vec![0.0; p], vec![0.0; q], Lambda::Full(lambda))?;
        let pipeline = NormalisationPipeline::new(vec![Step::Scale(scale), Step::SoftmaxColumns])?;
        let oracle = pipeline.apply(biaffine_attention(&x, &y, &expanded)?, None)?.matrix;
        m.record(max_abs_diff(head.data(), oracle.data()));
    }
    Ok(m)
}

fn concat_project_sum(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..50 {
        let (mm, p, q, d, k) = (rng.range(1, 6), rng.range(1, 4), rng.range(1, 4), rng.range(1, 3), rng.range(1, 4));
        let x = rng.tensor(&[mm, p]);
        let a = random_basis(rng, k, mm, mm, 1.0);
        let values: Vec<_> = (0..k).map(|_| rng.tensor(&[p, d])).collect();
        let theta_o = rng.tensor(&[q, k * d]);
        let sum = convolve(&a, &x, &transformer_theta(&values, &theta_o)?)?;
        let cat = concat_project(&a, &x, &values, &theta_o)?;
        m.record(max_abs_diff(sum.data(), cat.data()));
    }
    Ok(m)
}

fn attention_linearity(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for _ in 0..30 {
        let (mm, n, p) = (rng.range(1, 5), rng.range(1, 5), rng.range(1, 4));
        let (xa, ya) = (rng.tensor(&[mm, 2]), rng.tensor(&[n, 3]));
        let heads = vec![Head::Mechanism(random_biaffine(rng, 2, 3)?), Head::Mechanism(random_biaffine(rng, 2, 3)?)];
        let pipeline = NormalisationPipeline::new(vec![Step::SoftmaxColumns])?;
        let spec = AttentionConvSpec::new(heads, pipeline, ConvParams::new(rng.tensor(&[2, p, 2]))?, Wiring::General, None)?;
        let (x1, x2) = (rng.tensor(&[mm, p]), rng.tensor(&[mm, p]));
        let alpha = rng.uniform() * 2.0;
        let lhs = attention_convolve(&spec, &x1.axpby(alpha, &x2, 1.0)?, Some(&xa), Some(&ya))?;
        let y1 = attention_convolve(&spec, &x1, Some(&xa), Some(&ya))?;
        let y2 = attention_convolve(&spec, &x2, Some(&xa), Some(&ya))?;
        m.record(max_abs_diff(lhs.data(), y1.axpby(alpha, &y2, 1.0)?.data()));
    }
    Ok(m)
}

fn degeneracy(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for i in 0..20 {
        let (mm, p, q, k) = (rng.range(1, 6), rng.range(1, 4), rng.range(1, 4), rng.range(1, 3));
        let c = rng.uniform();
        let (pipeline, value) = match i % 3 {
            0 => (NormalisationPipeline::default(), c),
            1 => (NormalisationPipeline::new(vec![Step::SoftmaxColumns])?, 1.0 / mm as f64),
            _ => (NormalisationPipeline::new(vec![Step::Scale(0.5), Step::SoftmaxColumns])?, 1.0 / mm as f64),
        };
        let xi = BiaffineParams::new(c, vec![0.0; p], vec![0.0; p], Lambda::Full(DenseTensor::matrix(p, p, vec![0.0; p * p])?))?;
        let theta = ConvParams::new(rng.tensor(&[k, p, q]))?;
        let spec = AttentionConvSpec::new(vec![Head::Mechanism(xi); k], pipeline, theta.clone(), Wiring::SelfAttention, None)?;
        let x = rng.tensor(&[mm, p]);
        let y = attention_convolve(&spec, &x, None, None)?;
        let constant = SparseMatrix::from_dense(&DenseTensor::matrix(mm, mm, vec![value; mm * mm])?)?;
        let plain = convolve(&BasisStack::new(vec![constant; k])?, &x, &theta)?;
        let bitwise = y.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        m.record(if bitwise { 0.0 } else { max_abs_diff(y.data(), plain.data()).max(f64::MIN_POSITIVE) });
    }
    Ok(m)
}

fn parameter_counts(_: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for k in 1..=6 {
        for p in 1..=8 {
            for q in 1..=8 {
                let mut bad = 0u64;
                bad += (parameter_count(Scheme::Dense, k, p, q)? != (k * p * q) as u64) as u64;
                bad += (parameter_count(Scheme::Depthwise, k, p, q)? != (k * p + p * q) as u64) as u64;
                for groups in (1..=p.min(q)).filter(|g| p % g == 0 && q % g == 0) {
                    let stored = GroupedParams::new(DenseTensor::zeros(Shape::new([k, groups, p / groups, q / groups])?))?
                        .parameter_count();
                    let counted = parameter_count(Scheme::Grouped { groups }, k, p, q)?;
                    bad += (counted != (k * p * q / groups) as u64 || stored != counted) as u64;
                }
                for h in 1..=6 {
                    let counted = parameter_count(Scheme::Controlled { h }, k, p, q)?;
                    bad += (counted != (h * (k + p * q)) as u64) as u64;
                }
                m.record(bad as f64);
            }
        }
    }
    Ok(m)
}

fn reduced_evaluation(rng: &mut InstanceRng) -> Result<Measured> {
    let mut m = Measured::new();
    for i in 0..50 {
        let (k, mm, n, groups, pg, qg, h) = (
            rng.range(1, 5),
            rng.range(1, 6),
            rng.range(1, 6),
            rng.range(1, 3),
            rng.range(1, 2),
            rng.range(1, 2),
            rng.range(1, 3),
        );
        let (p, q) = (groups * pg, groups * qg);
        let a = random_basis(rng, k, mm, n, 0.5);
        let x = rng.tensor(&[mm, p]);
        let g = GroupedParams::new(rng.tensor(&[k, groups, pg, qg]))?;
        let mut err = max_abs_diff(convolve_grouped(&a, &x, &g)?.data(), convolve(&a, &x, &expand_grouped(&g))?.data());
        let d = DepthwiseParams::new(rng.tensor(&[k, p]), rng.tensor(&[p, q]))?;
        err = err.max(max_abs_diff(
            convolve_depthwise(&a, &x, &d)?.data(),
            convolve(&a, &x, &expand_depthwise(&d))?.data(),
        ));
        let channel = match i % 3 {
            0 => ChannelFactor::Dense(rng.tensor(&[h, p, q])),
            1 => ChannelFactor::Grouped(GroupedParams::new(rng.tensor(&[h, groups, pg, qg]))?),
            _ => ChannelFactor::Depthwise(DepthwiseParams::new(rng.tensor(&[h, p]), rng.tensor(&[p, q]))?),
        };
        let c = ControlledSeparableParams::new(rng.tensor(&[h, k]), channel)?;
        err = err.max(max_abs_diff(
            convolve_controlled(&a, &x, &c)?.data(),
            convolve(&a, &x, &expand_controlled_separable(&c))?.data(),
        ));
        m.record(err);
    }
    Ok(m)
}
