//! Independent oracles and the self-check suite behind `switch-ocp validate`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heat::{FormFunctions, HeatOperators, SourceField, TimeLayout, TrackingProblem, Trajectory};
use crate::instancegen::{Instance, InstanceSpec};
use crate::mesh::SpatialMesh;
use crate::ssnewton::{self, kkt_report, CutPool, NewtonConfig};
use crate::switchpoly::{enumerate_vertices, separate, separate_bruteforce, CuttingPlane, SwitchingBudget};
use crate::timegrid::{Control, Projection, TimePartition};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SeparationReport {
    pub binary_cases: usize,
    pub fractional_cases: usize,
    /// Largest `|DP − brute force|` violation difference on binary inputs.
    pub binary_mismatch: f64,
    pub fractional_mismatch: f64,
    /// Number of (cut, feasible vertex) pairs where the cut is violated.
    pub invalid_cuts: usize,
    /// Cases where only one of the two methods found a cut.
    pub disagreements: usize,
}

/// Dynamic-programming separation against brute force: every binary vector
/// of length `≤ max_m` for `σ_max ∈ 1..=3`, plus `random` fractional vectors.
pub fn separation_equivalence(max_m: usize, random: usize, seed: u64) -> Result<SeparationReport> {
    let mut report = SeparationReport::default();
    let mut compare = |w: &[f64], budget: SwitchingBudget, vertices: &[Vec<f64>], binary: bool| -> Result<()> {
        let dp = separate(w, budget)?;
        let bf = separate_bruteforce(w, budget)?;
        match (&dp, &bf) {
            (Some((_, a)), Some((_, b))) => {
                let diff = (a - b).abs();
                if binary {
                    report.binary_mismatch = report.binary_mismatch.max(diff);
                } else {
                    report.fractional_mismatch = report.fractional_mismatch.max(diff);
                }
            }
            (None, None) => {}
            _ => report.disagreements += 1,
        }
        if let Some((cut, _)) = dp {
            report.invalid_cuts += vertices.iter().filter(|v| cut.violation(v) > 1e-12).count();
        }
        Ok(())
    };
    for sigma in 1..=3 {
        let budget = SwitchingBudget::new(sigma)?;
        for m in 1..=max_m {
            let vertices = enumerate_vertices(m, budget)?;
            for bits in 0u32..(1 << m) {
                let w: Vec<f64> = (0..m).map(|i| f64::from((bits >> i) & 1)).collect();
                compare(&w, budget, &vertices, true)?;
                report.binary_cases += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random {
        let m = rng.gen_range(1..=max_m);
        let budget = SwitchingBudget::new(rng.gen_range(1..=3))?;
        let w: Vec<f64> = (0..m).map(|_| rng.gen()).collect();
        compare(&w, budget, &enumerate_vertices(m, budget)?, false)?;
        report.fractional_cases += 1;
    }
    Ok(report)
}

fn random_trajectory(rng: &mut ChaCha8Rng, layout: TimeLayout, levels: usize, dim: usize) -> Trajectory {
    let mut t = Trajectory::zeros(layout, levels, dim);
    t.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    t
}

fn random_source(rng: &mut ChaCha8Rng, intervals: usize, dim: usize) -> SourceField {
    let mut w = SourceField::zeros(intervals, dim);
    for i in 0..intervals {
        w.interval_mut(i).iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    w
}

fn random_control(rng: &mut ChaCha8Rng, grid: &TimePartition, switches: usize, lo: f64, hi: f64) -> Control {
    let coeffs = (0..switches * grid.num_intervals()).map(|_| rng.gen_range(lo..hi)).collect();
    Control::new(grid.clone(), switches, coeffs).expect("matching length")
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Largest relative errors of `⟨Σw, g⟩ = ⟨w, Σ*g⟩` and `⟨Ψu, z⟩ = ⟨u, Ψ*z⟩`
/// over random pairs on a nonuniform grid.
pub fn adjointness(nx: usize, nt: usize, pairs: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = Arc::new(SpatialMesh::unit_square(nx)?);
    let second = FormFunctions::from_fields(&mesh, &[&|x: f64, y: f64| x * (1.0 - y)])?;
    let bump = FormFunctions::quadratic_bump(&mesh);
    let forms = FormFunctions::from_loads(vec![bump.load(0).to_vec(), second.load(0).to_vec()])?;
    let mut boundaries = vec![0.0];
    for _ in 0..nt {
        boundaries.push(boundaries.last().unwrap() + rng.gen_range(0.5..1.5) / nt as f64);
    }
    let grid = TimePartition::from_boundaries(boundaries)?;
    let ops = HeatOperators::new(mesh, grid.clone(), forms)?;
    let (mut sigma_err, mut psi_err) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let w = random_source(&mut rng, nt, ops.dim());
        let g = random_trajectory(&mut rng, TimeLayout::Nodal, nt + 1, ops.dim());
        let lhs = ops.state_inner(&ops.solve_source(&w)?, &g)?;
        let rhs = ops.source_pairing(&w, &ops.solve_adjoint(&g)?)?;
        sigma_err = sigma_err.max(relative(lhs, rhs));

        let u = random_control(&mut rng, &grid, 2, -1.0, 1.0);
        let z = random_trajectory(&mut rng, TimeLayout::Interval, nt, ops.dim());
        let lhs = ops.source_pairing(&ops.apply_psi(&u)?, &z)?;
        let rhs = u.inner(&ops.apply_psi_star(&z)?)?;
        psi_err = psi_err.max(relative(lhs, rhs));
    }
    Ok((sigma_err, psi_err))
}

/// Largest relative error between `⟨∇f(u), d⟩` and central differences of
/// `f` with the given step, over random points and directions.
pub fn gradient_check(problem: &TrackingProblem, directions: usize, step: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = problem.partition().clone();
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let u = random_control(&mut rng, &grid, problem.switches(), 0.0, 1.0);
        let d = random_control(&mut rng, &grid, problem.switches(), -1.0, 1.0);
        let (_, g) = problem.objective_and_gradient(&u)?;
        let shifted = |s: f64| {
            let c = u.coeffs().iter().zip(d.coeffs()).map(|(a, b)| a + s * b).collect();
            problem.objective(&u.with_coeffs(c).expect("same shape"))
        };
        let fd = (shifted(step)? - shifted(-step)?) / (2.0 * step);
        worst = worst.max(relative(g.inner(&d)?, fd));
    }
    Ok(worst)
}

/// Exact minimizer of a small subproblem by enumerating all active sets.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub u: Control,
    pub lambda: Vec<f64>,
    pub objective: f64,
}

/// Solves `min f(u)` over the box and the cuts by trying every assignment of
/// coefficients to {lower, upper, free} and of cuts to {active, inactive},
/// keeping the best candidate that satisfies primal and dual feasibility.
pub fn dense_oracle(problem: &TrackingProblem, pool: &CutPool) -> Result<DenseSolution> {
    let grid = problem.partition().clone();
    let n = problem.switches();
    let d = n * grid.num_intervals();
    let k = pool.len();
    if d > 8 || k > 3 {
        return Err(Error::TooLarge(format!("dense oracle limited to 8 coefficients and 3 cuts, got {d} and {k}")));
    }
    let weights = Control::zeros(grid.clone(), n).weights();
    let alpha = problem.alpha();
    let zero = Control::zeros(grid.clone(), n);
    let (f0, g0) = problem.objective_and_gradient(&zero)?;
    let g0 = DVector::from_iterator(d, g0.coeffs().iter().zip(&weights).map(|(g, w)| g * w));
    let mut q = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        let h = problem.tracking_hessian_apply(&zero.with_coeffs(e)?)?;
        for r in 0..d {
            q[(r, i)] = weights[r] * (h.coeffs()[r] + if r == i { alpha } else { 0.0 });
        }
    }
    let q = 0.5 * (&q + q.transpose());
    let g = DMatrix::from_fn(k, d, |l, i| pool.row(l)[i]);
    let b = DVector::from_vec(pool.rhs());
    let objective = |x: &DVector<f64>| f0 + g0.dot(x) + 0.5 * x.dot(&(&q * x));
    let tol = 1e-10;

    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    for code in 0..3usize.pow(d as u32) {
        let mut status = vec![0u8; d];
        let mut c = code;
        for s in status.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..d).filter(|&i| status[i] == 2).collect();
        for mask in 0u32..(1 << k) {
            let act: Vec<usize> = (0..k).filter(|&l| mask >> l & 1 == 1).collect();
            let mut x = DVector::from_iterator(d, status.iter().map(|&s| if s == 1 { 1.0 } else { 0.0 }));
            let (nf, na) = (free.len(), act.len());
            let mut lambda = DVector::zeros(k);
            if nf + na > 0 {
                let mut kkt = DMatrix::zeros(nf + na, nf + na);
                let mut rhs = DVector::zeros(nf + na);
                let qx = &q * &x;
                for (a, &i) in free.iter().enumerate() {
                    for (bb, &j) in free.iter().enumerate() {
                        kkt[(a, bb)] = q[(i, j)];
                    }
                    for (m, &l) in act.iter().enumerate() {
                        kkt[(a, nf + m)] = g[(l, i)];
                        kkt[(nf + m, a)] = g[(l, i)];
                    }
                    rhs[a] = -g0[i] - qx[i];
                }
                for (m, &l) in act.iter().enumerate() {
                    rhs[nf + m] = b[l] - g.row(l).dot(&x.transpose());
                }
                let Some(sol) = kkt.full_piv_lu().solve(&rhs) else { continue };
                if !sol.iter().all(|v| v.is_finite()) {
                    continue;
                }
                for (a, &i) in free.iter().enumerate() {
                    x[i] = sol[a];
                }
                for (m, &l) in act.iter().enumerate() {
                    lambda[l] = sol[nf + m];
                }
            }
            // primal feasibility
            if x.iter().any(|&v| v < -tol || v > 1.0 + tol) {
                continue;
            }
            let gx = &g * &x;
            if (0..k).any(|l| gx[l] > b[l] + tol) {
                continue;
            }
            // dual feasibility
            if lambda.iter().any(|&l| l < -tol) {
                continue;
            }
            let grad = &q * &x + &g0 + g.transpose() * &lambda;
            let dual_ok = (0..d).all(|i| match status[i] {
                0 => grad[i] >= -tol,
                1 => grad[i] <= tol,
                _ => true,
            });
            if !dual_ok {
                continue;
            }
            let f = objective(&x);
            if best.as_ref().is_none_or(|(bf, _, _)| f < *bf) {
                best = Some((f, x, lambda));
            }
        }
    }
    let (f, x, lambda) = best.ok_or_else(|| Error::InvalidParameter("no KKT point found by enumeration".into()))?;
    Ok(DenseSolution { u: zero.with_coeffs(x.as_slice().to_vec())?, lambda: lambda.as_slice().to_vec(), objective: f })
}

/// A random subproblem with one switch, `nt` intervals, a 5 × 5 node mesh and
/// `cuts` random cuts that cut off the unconstrained minimizer.
pub fn tiny_instance(seed: u64, nt: usize, cuts: usize) -> Result<(TrackingProblem, CutPool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = Arc::new(SpatialMesh::unit_square(5)?);
    let forms = FormFunctions::quadratic_bump(&mesh);
    let grid = TimePartition::uniform(rng.gen_range(0.5..2.0), nt)?;
    let ops = Arc::new(HeatOperators::new(mesh, grid.clone(), forms)?);
    let target = random_control(&mut rng, &grid, 1, -1.0, 2.0);
    let y0 = vec![0.0; ops.dim()];
    let mut desired = ops.solve_forward(&target, &y0)?;
    let scale = desired.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    desired.as_mut_slice().iter_mut().for_each(|v| *v += 0.2 * scale * rng.gen_range(-1.0..1.0));
    let alpha = 1e-2;
    let problem = TrackingProblem::new(ops, desired, &y0, alpha)?;

    let mut pool = CutPool::new(grid.clone(), 1);
    let projection = Projection::new(grid.clone(), 1)?;
    while pool.len() < cuts {
        let free = dense_oracle(&problem, &pool)?;
        let coeffs: Vec<f64> = (0..nt).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let value: f64 = coeffs.iter().zip(free.u.coeffs()).map(|(a, u)| a * u).sum();
        let box_min: f64 = coeffs.iter().map(|a| a.min(0.0)).sum();
        let rhs = value - rng.gen_range(0.05..0.5) * (value - box_min);
        if value - box_min < 1e-3 {
            continue;
        }
        pool.push(CuttingPlane::new(projection.clone(), coeffs, rhs)?)?;
    }
    Ok((problem, pool))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TinyKktReport {
    pub instances: usize,
    pub max_objective_error: f64,
    pub max_kkt_residual: f64,
    /// Largest `|F₂|` of the supplied complementarity function at oracle points.
    pub max_f2_at_oracle: f64,
    pub all_converged: bool,
}

/// Complementarity function for one cut: `(Gu)_ℓ, λ_ℓ, b_ℓ, ρ ↦ F₂`.
pub type ComplementarityFn = fn(f64, f64, f64, f64) -> f64;

pub fn f2_standard(gu: f64, lambda: f64, b: f64, rho: f64) -> f64 {
    -rho * lambda + (gu + rho * lambda - b).max(0.0)
}

/// Newton solution against the dense oracle on `count` tiny instances,
/// alternating `N_t ∈ {2, 3}` and zero or one cut.
pub fn tiny_kkt(count: usize, seed: u64, rho: f64, f2: ComplementarityFn) -> Result<TinyKktReport> {
    let mut report = TinyKktReport { all_converged: true, ..Default::default() };
    let cfg = NewtonConfig::default();
    for s in 0..count {
        let (problem, pool) = tiny_instance(seed + s as u64, 2 + s % 2, (s / 2) % 2)?;
        let oracle = dense_oracle(&problem, &pool)?;
        let u0 = Control::constant(problem.partition().clone(), 1, 0.5);
        let state = ssnewton::solve(&problem, &pool, &u0, &vec![0.0; pool.len()], rho, &cfg)?;
        report.all_converged &= state.converged();
        let f = problem.objective(&state.u)?;
        report.max_objective_error = report.max_objective_error.max(relative(f, oracle.objective));
        report.max_kkt_residual = report.max_kkt_residual.max(kkt_report(&problem, &pool, &state.u, &state.lambda)?.max());
        let gu = pool.apply(oracle.u.coeffs());
        for ((g, l), b) in gu.iter().zip(&oracle.lambda).zip(pool.rhs()) {
            report.max_f2_at_oracle = report.max_f2_at_oracle.max(f2(*g, *l, b, rho).abs());
        }
        report.instances += 1;
    }
    Ok(report)
}

/// Runs every check and reports pass/fail per check.
pub fn run_all(f2: ComplementarityFn) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let fail = |name: &'static str, e: Error| CheckResult::new(name, false, format!("error: {e}"));

    match separation_equivalence(12, 1000, 7) {
        Ok(r) => {
            out.push(CheckResult::new(
                "separation-vs-bruteforce",
                r.binary_mismatch == 0.0 && r.fractional_mismatch <= 1e-12 && r.disagreements == 0,
                format!(
                    "{} binary, {} fractional; mismatch {:.2e}/{:.2e}, disagreements {}",
                    r.binary_cases, r.fractional_cases, r.binary_mismatch, r.fractional_mismatch, r.disagreements
                ),
            ));
            out.push(CheckResult::new(
                "cut-validity",
                r.invalid_cuts == 0,
                format!("{} cut/vertex violations", r.invalid_cuts),
            ));
        }
        Err(e) => out.push(fail("separation-vs-bruteforce", e)),
    }

    match adjointness(17, 32, 50, 11) {
        Ok((s, p)) => out.push(CheckResult::new(
            "adjointness",
            s < 1e-12 && p < 1e-12,
            format!("state {s:.2e}, control {p:.2e}"),
        )),
        Err(e) => out.push(fail("adjointness", e)),
    }

    let gradient = (|| {
        let spec = InstanceSpec { seed: 3, nx: 9, nt_fine: 400, ..InstanceSpec::default() };
        let inst = Instance::build(&spec)?;
        gradient_check(&inst.problem(16)?, 20, 1e-4, 5)
    })();
    match gradient {
        Ok(e) => out.push(CheckResult::new("gradient", e < 1e-6, format!("max relative error {e:.2e}"))),
        Err(e) => out.push(fail("gradient", e)),
    }

    match tiny_kkt(10, 100, 1e-5, f2) {
        Ok(r) => {
            out.push(CheckResult::new(
                "tiny-kkt-objective",
                r.all_converged && r.max_objective_error < 1e-9,
                format!("{} instances, max relative error {:.2e}", r.instances, r.max_objective_error),
            ));
            out.push(CheckResult::new(
                "tiny-kkt-certificate",
                r.max_kkt_residual < 1e-8,
                format!("max residual {:.2e}", r.max_kkt_residual),
            ));
            out.push(CheckResult::new(
                "complementarity",
                r.max_f2_at_oracle < 1e-9,
                format!("max |F2| at oracle points {:.2e}", r.max_f2_at_oracle),
            ));
        }
        Err(e) => out.push(fail("tiny-kkt-objective", e)),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_on_unconstrained_interior_problem() {
        let (problem, pool) = tiny_instance(1, 2, 0).unwrap();
        let big = problem.with_alpha(10.0).unwrap();
        let sol = dense_oracle(&big, &pool).unwrap();
        let (_, g) = big.objective_and_gradient(&sol.u).unwrap();
        assert!(g.coeffs().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn oracle_cut_is_active() {
        let (problem, pool) = tiny_instance(2, 3, 1).unwrap();
        let sol = dense_oracle(&problem, &pool).unwrap();
        let gu = pool.apply(sol.u.coeffs());
        assert!((gu[0] - pool.rhs()[0]).abs() < 1e-9);
        assert!(sol.lambda[0] >= 0.0);
    }

    #[test]
    fn flipped_complementarity_is_detected() {
        fn flipped(gu: f64, lambda: f64, b: f64, rho: f64) -> f64 {
            rho * lambda + (gu + rho * lambda - b).max(0.0)
        }
        let good = tiny_kkt(4, 100, 1e-5, f2_standard).unwrap();
        let bad = tiny_kkt(4, 100, 1e-5, flipped).unwrap();
        assert!(good.max_f2_at_oracle < 1e-9);
        assert!(bad.max_f2_at_oracle > 1e-9);
    }
}
