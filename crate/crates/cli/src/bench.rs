//! `bench`: wall time and multiply-add counts of the three contraction paths.

use std::time::{Duration, Instant};

use structconv::basis::{grid_basis, identity_basis, GridSpec, KernelSpec};
use structconv::conv::execute_batched;
use structconv::{BasisStack, ContractionPath, ConvParams, DenseTensor, InstanceRng, PathChoice, SparseMatrix};

use crate::args::{BenchArgs, BenchKind, GlobalArgs};
use crate::{CmdResult, Failure};

const AGREEMENT_TOL: f64 = 1e-9;

fn workload(kind: BenchKind, m: usize, a: &BenchArgs, rng: &mut InstanceRng) -> structconv::Result<BasisStack> {
    match kind {
        BenchKind::Grid => grid_basis(&GridSpec::from_dims(&[m])?, &KernelSpec::centered(vec![a.kernel])?),
        BenchKind::Identity => identity_basis(m),
        BenchKind::Random => {
            let mats = (0..a.kernel)
                .map(|_| SparseMatrix::from_dense(&rng.sparse_matrix(m, m, a.density)))
                .collect::<structconv::Result<Vec<_>>>()?;
            BasisStack::new(mats)
        }
    }
}

fn rel_diff(a: &DenseTensor, reference: &DenseTensor) -> f64 {
    let scale = reference.max_abs().max(f64::MIN_POSITIVE);
    a.max_abs_diff(reference).unwrap_or(f64::INFINITY) / scale
}

pub fn run(g: &GlobalArgs, a: &BenchArgs) -> CmdResult {
    if a.repeats == 0 || a.kernel == 0 || a.channels == 0 || a.out_channels == 0 {
        return Err(Failure::Usage("--repeats, --kernel and channel counts must be ≥ 1".into()));
    }
    if !(0.0..=1.0).contains(&a.density) {
        return Err(Failure::Usage(format!("--density {} outside [0, 1]", a.density)));
    }
    let tol = g.tol.unwrap_or(AGREEMENT_TOL);
    let mut rng = InstanceRng::new(g.seed);
    println!(
        "{:<9}{:>7}{:>5}{:>4}{:>4}{:>4}{:>9}  {:<6}{:>16}{:>16}{:>7}{:>12}",
        "kind", "M", "B", "P", "Q", "K", "nnz", "path", "predicted", "measured", "ratio", "time ms"
    );
    for &m in &a.sizes {
        for &b in &a.batch {
            if m == 0 || b == 0 {
                return Err(Failure::Usage("sizes and batch sizes must be ≥ 1".into()));
            }
            let basis = workload(a.kind, m, a, &mut rng)?;
            let theta = ConvParams::new(rng.tensor(&[basis.k(), a.channels, a.out_channels]))?;
            let x = rng.tensor(&[b, m, a.channels]);

            // agreement first, timing only if all three paths match
            let runs = ContractionPath::ALL
                .iter()
                .map(|&p| execute_batched(&basis, &x, &theta, PathChoice::Fixed(p)))
                .collect::<structconv::Result<Vec<_>>>()?;
            for r in &runs[1..] {
                let err = rel_diff(&r.output, &runs[0].output);
                if !(err <= tol) {
                    return Err(Failure::Numerical(format!(
                        "path {} disagrees with green by {err:.3e} (tol {tol:.1e}) at M={m} B={b}",
                        r.plan.path
                    )));
                }
            }

            let best = runs.iter().min_by_key(|r| r.multiply_adds).map(|r| r.plan.path);
            for run in &runs {
                let path = run.plan.path;
                let mut fastest = Duration::MAX;
                for _ in 0..a.repeats {
                    let start = Instant::now();
                    execute_batched(&basis, &x, &theta, PathChoice::Fixed(path))?;
                    fastest = fastest.min(start.elapsed());
                }
                let ratio = run.multiply_adds as f64 / run.plan.estimate as f64;
                let mark = if Some(path) == best { " *" } else { "" };
                println!(
                    "{:<9}{:>7}{:>5}{:>4}{:>4}{:>4}{:>9}  {:<6}{:>16}{:>16}{:>7.3}{:>12.3}{mark}",
                    format!("{:?}", a.kind).to_lowercase(),
                    m,
                    b,
                    a.channels,
                    a.out_channels,
                    basis.k(),
                    basis.nnz(),
                    path.colour(),
                    run.plan.estimate,
                    run.multiply_adds,
                    ratio,
                    fastest.as_secs_f64() * 1e3
                );
            }
        }
    }
    println!("* fewest multiply-adds; outputs agree within {tol:.1e} relative");
    Ok(())
}
