//! Semi-smooth Newton method for the box- and cut-constrained subproblem
//!
//! ```text
//! min f(u)  s.t.  0 ≤ u ≤ 1,  G u ≤ b,
//! ```
//!
//! written as `F(u, λ) = 0` with the max/min complementarity functions. Each
//! step fixes `u` on the predicted active sets, drops multipliers of inactive
//! cuts and solves the remaining symmetric saddle-point system with MINRES.
//!
//! Control-space quantities (gradients, `Ψ*p`, `G*λ`) are `L²(0, T)`
//! representatives; the linear algebra is done in coefficient space, where
//! the time weights make the reduced operator Euclidean-symmetric.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::heat::{TrackingProblem, Trajectory};
use crate::linalg::dot;
use crate::minres::{minres, MinresConfig};
use crate::switchpoly::CuttingPlane;
use crate::timegrid::{Control, TimePartition};

/// Cutting planes `aᵀ Π(u) ≤ b` expressed on the control grid as rows of `G`.
#[derive(Debug, Clone)]
pub struct CutPool {
    grid: TimePartition,
    switches: usize,
    cuts: Vec<CuttingPlane>,
    rows: Vec<Vec<f64>>,
}

impl CutPool {
    pub fn new(grid: TimePartition, switches: usize) -> Self {
        Self { grid, switches, cuts: Vec::new(), rows: Vec::new() }
    }

    pub fn push(&mut self, cut: CuttingPlane) -> Result<()> {
        if cut.projection.switches() != self.switches {
            return Err(Error::DimensionMismatch { expected: self.switches, got: cut.projection.switches() });
        }
        let parents = self.grid.parent_map(cut.projection.partition())?;
        let fine = self.grid.lengths();
        let coarse = cut.projection.partition().lengths();
        let nf = fine.len();
        let nc = coarse.len();
        let mut row = vec![0.0; self.switches * nf];
        for j in 0..self.switches {
            for (f, &c) in parents.iter().enumerate() {
                row[j * nf + f] = cut.coeffs[j * nc + c] * fine[f] / coarse[c];
            }
        }
        self.rows.push(row);
        self.cuts.push(cut);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn grid(&self) -> &TimePartition {
        &self.grid
    }

    pub fn cuts(&self) -> &[CuttingPlane] {
        &self.cuts
    }

    /// Row `ℓ` of `G` in coefficient space: `(Gu)_ℓ = row · u`.
    pub fn row(&self, l: usize) -> &[f64] {
        &self.rows[l]
    }

    pub fn rhs(&self) -> Vec<f64> {
        self.cuts.iter().map(|c| c.rhs).collect()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| dot(r, u)).collect()
    }

    /// Euclidean transpose `Gᵀλ`.
    pub fn apply_transpose(&self, lambda: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.switches * self.grid.num_intervals()];
        for (r, &l) in self.rows.iter().zip(lambda) {
            crate::linalg::axpy(l, r, &mut out);
        }
        out
    }

    /// `G*λ` as an `L²(0, T)` function: `Gᵀλ` divided by the interval lengths.
    pub fn apply_adjoint(&self, lambda: &[f64]) -> Vec<f64> {
        let lengths = self.grid.lengths();
        let n = lengths.len();
        let mut out = self.apply_transpose(lambda);
        for (k, v) in out.iter_mut().enumerate() {
            *v /= lengths[k % n];
        }
        out
    }
}

/// Predicted active sets: `upper` (`A⁺`, `u = 1`), `lower` (`A⁻`, `u = 0`),
/// and `cuts` (`B`, active cutting planes). Everything else is inactive.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActiveSets {
    pub upper: Vec<bool>,
    pub lower: Vec<bool>,
    pub cuts: Vec<bool>,
}

impl ActiveSets {
    pub fn inactive(&self) -> Vec<usize> {
        (0..self.upper.len()).filter(|&i| !self.upper[i] && !self.lower[i]).collect()
    }

    pub fn active_cuts(&self) -> Vec<usize> {
        (0..self.cuts.len()).filter(|&l| self.cuts[l]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    pub max_iter: usize,
    /// Stop once `‖F₁‖_{L²} + ‖F₂‖₂` falls below this.
    pub tol: f64,
    pub krylov: MinresConfig,
    /// Shorten full steps that do not reduce the residual.
    pub safeguard: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-10, krylov: MinresConfig { tol: 1e-12, max_iter: 2000 }, safeguard: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonStatus {
    Converged,
    IterationCap,
    KrylovFailure,
}

#[derive(Debug, Clone)]
pub struct NewtonState {
    pub u: Control,
    pub lambda: Vec<f64>,
    /// Adjoint state `p = Σ*(Su − y_d)` at `u`.
    pub adjoint: Trajectory,
    pub active: ActiveSets,
    pub f1_norm: f64,
    pub f2_norm: f64,
    /// Number of linear solves performed.
    pub iterations: usize,
    pub krylov_iterations: usize,
    /// Cuts dropped from a step because their rows were (nearly) dependent.
    pub dropped_cuts: Vec<usize>,
    pub status: NewtonStatus,
}

impl NewtonState {
    pub fn converged(&self) -> bool {
        self.status == NewtonStatus::Converged
    }

    pub fn residual_norm(&self) -> f64 {
        self.f1_norm + self.f2_norm
    }
}

fn check_inputs(problem: &TrackingProblem, pool: &CutPool, u: &Control, lambda: &[f64], rho: f64) -> Result<()> {
    if !(problem.alpha() > 0.0) {
        return Err(Error::InvalidParameter("semi-smooth Newton needs alpha > 0".into()));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter("rho must be positive".into()));
    }
    if pool.grid() != problem.partition() || pool.switches != problem.switches() {
        return Err(Error::PartitionMismatch("cut pool and problem use different grids".into()));
    }
    if u.partition() != problem.partition() {
        return Err(Error::PartitionMismatch("control is not on the problem grid".into()));
    }
    if lambda.len() != pool.len() {
        return Err(Error::DimensionMismatch { expected: pool.len(), got: lambda.len() });
    }
    Ok(())
}

/// `−Ψ*p − G*λ`, the quantity whose comparison with `±α/2` decides the box sets.
pub fn switching_function(problem: &TrackingProblem, pool: &CutPool, adjoint: &Trajectory, lambda: &[f64]) -> Result<Vec<f64>> {
    let psi_p = problem.ops().apply_psi_star(adjoint)?;
    let g_lambda = pool.apply_adjoint(lambda);
    Ok(psi_p.coeffs().iter().zip(&g_lambda).map(|(a, b)| -a - b).collect())
}

/// The complementarity residual `(F₁, F₂)` for a given switching function.
pub fn residual_parts(
    problem: &TrackingProblem,
    pool: &CutPool,
    u: &Control,
    lambda: &[f64],
    switching: &[f64],
    rho: f64,
) -> (Vec<f64>, Vec<f64>) {
    let half = 0.5 * problem.alpha();
    let f1 = u
        .coeffs()
        .iter()
        .zip(switching)
        .map(|(&ui, &q)| {
            -q + problem.alpha() * (ui - 0.5) + (q + half).min(0.0) + (q - half).max(0.0)
        })
        .collect();
    let gu = pool.apply(u.coeffs());
    let f2 = gu
        .iter()
        .zip(lambda)
        .zip(pool.cuts())
        .map(|((g, l), c)| -rho * l + (g + rho * l - c.rhs).max(0.0))
        .collect();
    (f1, f2)
}

/// `F₁` (as a control) and `F₂` at `(u, λ)`.
pub fn residual(
    problem: &TrackingProblem,
    pool: &CutPool,
    u: &Control,
    lambda: &[f64],
    rho: f64,
) -> Result<(Control, Vec<f64>)> {
    check_inputs(problem, pool, u, lambda, rho)?;
    let p = problem.adjoint(u)?;
    let q = switching_function(problem, pool, &p, lambda)?;
    let (f1, f2) = residual_parts(problem, pool, u, lambda, &q, rho);
    Ok((u.with_coeffs(f1)?, f2))
}

/// Active sets by the strict inequalities; ties stay inactive.
pub fn classify(
    problem: &TrackingProblem,
    pool: &CutPool,
    u: &Control,
    lambda: &[f64],
    switching: &[f64],
    rho: f64,
) -> ActiveSets {
    let half = 0.5 * problem.alpha();
    let gu = pool.apply(u.coeffs());
    ActiveSets {
        upper: switching.iter().map(|&q| q - half > 0.0).collect(),
        lower: switching.iter().map(|&q| q + half < 0.0).collect(),
        cuts: gu
            .iter()
            .zip(lambda)
            .zip(pool.cuts())
            .map(|((g, l), c)| g + rho * l > c.rhs)
            .collect(),
    }
}

pub fn update_active_sets(
    problem: &TrackingProblem,
    pool: &CutPool,
    u: &Control,
    lambda: &[f64],
    rho: f64,
) -> Result<ActiveSets> {
    check_inputs(problem, pool, u, lambda, rho)?;
    let p = problem.adjoint(u)?;
    let q = switching_function(problem, pool, &p, lambda)?;
    Ok(classify(problem, pool, u, lambda, &q, rho))
}

/// Result of one reduced Newton solve.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub u: Control,
    pub lambda: Vec<f64>,
    pub krylov_iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
    pub dropped: Vec<usize>,
}

/// Orders the active cuts newest first and keeps those whose rows on the
/// inactive coefficients are independent of the newer ones. Returns kept
/// cuts (oldest first) and the residual ratio of every screened cut after
/// orthogonalization.
fn independent_cuts(pool: &CutPool, active: &[usize], inactive: &[usize], weights: &[f64]) -> (Vec<usize>, Vec<(usize, f64)>) {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut ratios = Vec::new();
    for &l in active.iter().rev() {
        let mut v: Vec<f64> = inactive.iter().map(|&i| pool.row(l)[i] / weights[i].sqrt()).collect();
        let norm0 = dot(&v, &v).sqrt();
        for b in &basis {
            let c = dot(&v, b);
            crate::linalg::axpy(-c, b, &mut v);
        }
        let norm = dot(&v, &v).sqrt();
        let ratio = if norm0 > 0.0 { norm / norm0 } else { 0.0 };
        ratios.push((l, ratio));
        if norm0 > 1e-12 && ratio > 1e-8 {
            basis.push(v.iter().map(|x| x / norm).collect());
            kept.push(l);
        }
    }
    kept.reverse();
    (kept, ratios)
}

/// Matrix-free reduced saddle-point operator for fixed active sets, acting
/// on `(u_I, λ_B)` in coefficient space:
///
/// ```text
/// [ W_I (αI + Ψ*Σ*ΣΨ)_II   G_BIᵀ ]
/// [ G_BI                   0     ]
/// ```
///
/// `W` holds the interval lengths, so the operator is Euclidean-symmetric.
pub struct ReducedSystem<'a> {
    problem: &'a TrackingProblem,
    pool: &'a CutPool,
    template: Control,
    weights: Vec<f64>,
    inactive: Vec<usize>,
    cuts: Vec<usize>,
}

impl<'a> ReducedSystem<'a> {
    pub fn new(problem: &'a TrackingProblem, pool: &'a CutPool, inactive: Vec<usize>, cuts: Vec<usize>) -> Self {
        let template = Control::zeros(problem.partition().clone(), problem.switches());
        let weights = template.weights();
        Self { problem, pool, template, weights, inactive, cuts }
    }

    pub fn dim(&self) -> usize {
        self.inactive.len() + self.cuts.len()
    }

    pub fn inactive(&self) -> &[usize] {
        &self.inactive
    }

    pub fn cuts(&self) -> &[usize] {
        &self.cuts
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let ni = self.inactive.len();
        let alpha = self.problem.alpha();
        let mut v = vec![0.0; self.weights.len()];
        for (k, &i) in self.inactive.iter().enumerate() {
            v[i] = x[k];
        }
        let h = self
            .problem
            .tracking_hessian_apply(&self.template.with_coeffs(v.clone()).expect("same shape"))
            .expect("grid checked");
        let mut out: Vec<f64> = self
            .inactive
            .iter()
            .enumerate()
            .map(|(k, &i)| self.weights[i] * (alpha * x[k] + h.coeffs()[i]))
            .collect();
        for (m, &l) in self.cuts.iter().enumerate() {
            let row = self.pool.row(l);
            for (k, &i) in self.inactive.iter().enumerate() {
                out[k] += x[ni + m] * row[i];
            }
        }
        out.extend(self.cuts.iter().map(|&l| dot(self.pool.row(l), &v)));
        out
    }

    /// Gram block `α⁻¹ G_BI W_I⁻¹ G_BIᵀ` of the preconditioner.
    fn gram(&self) -> DMatrix<f64> {
        let nb = self.cuts.len();
        let alpha = self.problem.alpha();
        DMatrix::from_fn(nb, nb, |a, b| {
            let (ra, rb) = (self.pool.row(self.cuts[a]), self.pool.row(self.cuts[b]));
            self.inactive.iter().map(|&i| ra[i] * rb[i] / self.weights[i]).sum::<f64>() / alpha
        })
    }
}

/// Multiplier update for an active cut whose support lies entirely in
/// `A⁺ ∪ A⁻`, where the reduced system cannot determine it. The multiplier
/// moves (up if the cut is violated at the fixed values, down otherwise)
/// until the first coefficient of its support reaches the inactive band.
fn ratio_step(problem: &TrackingProblem, pool: &CutPool, l: usize, fixed: &[f64], q: &[f64], lambda: f64) -> f64 {
    let half = 0.5 * problem.alpha();
    let slack = dot(pool.row(l), fixed) - pool.cuts()[l].rhs;
    let direction = if slack > 0.0 { 1.0 } else { -1.0 };
    let g = pool.apply_adjoint(&(0..pool.len()).map(|m| if m == l { 1.0 } else { 0.0 }).collect::<Vec<_>>());
    let mut step = f64::INFINITY;
    for (i, (&qi, &gi)) in q.iter().zip(&g).enumerate() {
        let rate = direction * gi;
        if pool.row(l)[i] == 0.0 || rate == 0.0 {
            continue;
        }
        // q_i decreases by rate per unit step
        let distance = if qi > half && rate > 0.0 {
            (qi - half) / rate
        } else if qi < -half && rate < 0.0 {
            (qi + half) / rate
        } else {
            continue;
        };
        step = step.min(distance);
    }
    if direction < 0.0 {
        step = step.min(lambda);
    }
    if !step.is_finite() {
        return lambda.max(0.0);
    }
    (lambda + direction * step).max(0.0)
}

/// Solves the reduced system for fixed active sets.
///
/// `u = 1` on `A⁺`, `u = 0` on `A⁻`, `λ = 0` off `B`; the remaining unknowns
/// `(u_I, λ_B)` satisfy
///
/// ```text
/// (αI + Ψ*Σ*ΣΨ χ_I*) u_I + G* λ_B = Ψ*Σ*(y_d − ΣΨ χ_{A⁺}* 1 − ζ) + α/2   on I
/// (G χ_I* u_I)_B                  = b_B − (G χ_{A⁺}* 1)_B
/// ```
///
/// solved by MINRES with the block preconditioner `diag(αI, α⁻¹ G G*)`.
/// Active cuts whose rows on `I` depend on newer ones keep their current
/// multiplier for this step and are reported in `dropped`.
pub fn newton_step(
    problem: &TrackingProblem,
    pool: &CutPool,
    sets: &ActiveSets,
    current: (&Control, &[f64]),
    krylov: MinresConfig,
) -> Result<StepOutcome> {
    let alpha = problem.alpha();
    let (u_cur, lambda_cur) = current;
    let weights = u_cur.weights();
    let inactive = sets.inactive();
    let active_cuts = sets.active_cuts();
    let ni = inactive.len();

    let mut base = vec![0.0; weights.len()];
    for (i, b) in base.iter_mut().enumerate() {
        if sets.upper[i] {
            *b = 1.0;
        }
    }

    let (mut kept, mut ratios) = independent_cuts(pool, &active_cuts, &inactive, &weights);
    let mut dropped: Vec<usize> = active_cuts.iter().copied().filter(|l| !kept.contains(l)).collect();

    let frozen_multipliers = |dropped: &[usize]| -> Result<Vec<f64>> {
        let mut lambda = vec![0.0; pool.len()];
        for &l in dropped {
            lambda[l] = lambda_cur[l].max(0.0);
        }
        if dropped.iter().any(|&l| inactive.iter().all(|&i| pool.row(l)[i] == 0.0)) {
            let q = switching_function(problem, pool, &problem.adjoint(u_cur)?, lambda_cur)?;
            for &l in dropped {
                if inactive.iter().all(|&i| pool.row(l)[i] == 0.0) {
                    lambda[l] = ratio_step(problem, pool, l, &base, &q, lambda[l]);
                }
            }
        }
        Ok(lambda)
    };
    let finish = |solved: &[(usize, f64)], dropped: &mut Vec<usize>| -> Result<Vec<f64>> {
        let mut lambda = frozen_multipliers(dropped)?;
        for &(l, v) in solved {
            lambda[l] = v;
        }
        dropped.sort_unstable();
        Ok(lambda)
    };

    if ni == 0 {
        dropped.extend(kept.iter().copied());
        let lambda = finish(&[], &mut dropped)?;
        return Ok(StepOutcome {
            u: u_cur.with_coeffs(base)?,
            lambda,
            krylov_iterations: 0,
            converged: true,
            relative_residual: 0.0,
            dropped,
        });
    }

    let mut total_krylov = 0;
    loop {
        // right-hand side; dropped cuts enter with their frozen multipliers
        let frozen = frozen_multipliers(&dropped)?;
        let g_frozen = pool.apply_adjoint(&frozen);
        let p_base = problem.adjoint(&u_cur.with_coeffs(base.clone())?)?;
        let psi_p = problem.ops().apply_psi_star(&p_base)?;
        let mut rhs: Vec<f64> = inactive
            .iter()
            .map(|&i| weights[i] * (-psi_p.coeffs()[i] - g_frozen[i] + 0.5 * alpha))
            .collect();
        rhs.extend(kept.iter().map(|&l| pool.cuts()[l].rhs - dot(pool.row(l), &base)));

        let system = ReducedSystem::new(problem, pool, inactive.clone(), kept.clone());
        let Some(chol) = system.gram().cholesky() else {
            // numerically dependent despite the screening
            let worst = kept.remove(0);
            dropped.push(worst);
            continue;
        };
        let nb = kept.len();
        let precondition = |r: &[f64]| -> Vec<f64> {
            let mut z: Vec<f64> = inactive.iter().enumerate().map(|(k, &i)| r[k] / (alpha * weights[i])).collect();
            if nb > 0 {
                z.extend(chol.solve(&DVector::from_column_slice(&r[ni..])).iter());
            }
            z
        };
        let x0: Vec<f64> = inactive
            .iter()
            .map(|&i| u_cur.coeffs()[i])
            .chain(kept.iter().map(|&l| lambda_cur[l]))
            .collect();
        let out = minres(|x| system.apply(x), precondition, &rhs, Some(&x0), krylov);
        total_krylov += out.iterations;

        if !out.converged && !kept.is_empty() {
            // stagnation: drop the most dependent active cut and retry
            let ratio = |l: usize| ratios.iter().find(|r| r.0 == l).map_or(1.0, |r| r.1);
            let worst = kept
                .iter()
                .copied()
                .min_by(|&a, &b| ratio(a).partial_cmp(&ratio(b)).unwrap().then(a.cmp(&b)))
                .unwrap();
            kept.retain(|&l| l != worst);
            dropped.push(worst);
            ratios.retain(|r| r.0 != worst);
            continue;
        }

        let mut u = base.clone();
        for (k, &i) in inactive.iter().enumerate() {
            u[i] = out.x[k];
        }
        let solved: Vec<(usize, f64)> = kept.iter().enumerate().map(|(m, &l)| (l, out.x[ni + m])).collect();
        let lambda = finish(&solved, &mut dropped)?;
        return Ok(StepOutcome {
            u: u_cur.with_coeffs(u)?,
            lambda,
            krylov_iterations: total_krylov,
            converged: out.converged,
            relative_residual: out.relative_residual,
            dropped,
        });
    }
}

/// Residual data at one iterate.
struct Evaluation {
    adjoint: Trajectory,
    active: ActiveSets,
    f1_norm: f64,
    f2_norm: f64,
    alpha: f64,
}

impl Evaluation {
    /// `‖F₁/α‖² + ‖F₂‖²`, both parts in units of the control.
    fn merit(&self) -> f64 {
        let f1 = self.f1_norm / self.alpha;
        f1 * f1 + self.f2_norm * self.f2_norm
    }
}

fn evaluate(problem: &TrackingProblem, pool: &CutPool, u: &Control, lambda: &[f64], rho: f64) -> Result<Evaluation> {
    let adjoint = problem.adjoint(u)?;
    let q = switching_function(problem, pool, &adjoint, lambda)?;
    let active = classify(problem, pool, u, lambda, &q, rho);
    let (f1, f2) = residual_parts(problem, pool, u, lambda, &q, rho);
    Ok(Evaluation {
        adjoint,
        active,
        f1_norm: weighted_norm(&f1, &u.weights()),
        f2_norm: crate::linalg::norm2(&f2),
        alpha: problem.alpha(),
    })
}

fn weighted_norm(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
}

fn blend(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Semi-smooth Newton iteration from `(u0, λ0)`.
///
/// Stops when the residual falls below `config.tol` and no multiplier is
/// below `-config.tol`. Repeated active sets
/// with a residual above tolerance trigger another (warm-started) linear
/// solve rather than termination. With `config.safeguard`, a full step that
/// does not reduce `‖F‖²` is shortened by halving until it does.
pub fn solve(
    problem: &TrackingProblem,
    pool: &CutPool,
    u0: &Control,
    lambda0: &[f64],
    rho: f64,
    config: &NewtonConfig,
) -> Result<NewtonState> {
    check_inputs(problem, pool, u0, lambda0, rho)?;
    let mut u = u0.clone();
    let mut lambda = lambda0.to_vec();
    let mut iterations = 0;
    let mut krylov_iterations = 0;
    let mut dropped_cuts = Vec::new();
    let mut krylov_failed = false;
    let mut eval = evaluate(problem, pool, &u, &lambda, rho)?;

    loop {
        // F₂ weighs a negative multiplier of a slack cut only by ρ
        let signed = lambda.iter().all(|&l| l >= -config.tol);
        let status = if eval.f1_norm + eval.f2_norm <= config.tol && signed {
            Some(NewtonStatus::Converged)
        } else if krylov_failed {
            Some(NewtonStatus::KrylovFailure)
        } else if iterations >= config.max_iter {
            Some(NewtonStatus::IterationCap)
        } else {
            None
        };
        if let Some(status) = status {
            dropped_cuts.sort_unstable();
            dropped_cuts.dedup();
            return Ok(NewtonState {
                u,
                lambda,
                adjoint: eval.adjoint,
                active: eval.active,
                f1_norm: eval.f1_norm,
                f2_norm: eval.f2_norm,
                iterations,
                krylov_iterations,
                dropped_cuts,
                status,
            });
        }

        let step = newton_step(problem, pool, &eval.active, (&u, &lambda), config.krylov)?;
        krylov_iterations += step.krylov_iterations;
        dropped_cuts.extend(step.dropped.iter().copied());
        krylov_failed = !step.converged;
        iterations += 1;

        let mut next = evaluate(problem, pool, &step.u, &step.lambda, rho)?;
        let (mut u_next, mut lambda_next) = (step.u, step.lambda);
        if config.safeguard && next.merit() >= eval.merit() {
            let mut t = 0.5;
            while t >= 1.0 / 1024.0 {
                let ut = u.with_coeffs(blend(u.coeffs(), u_next.coeffs(), t))?;
                let lt = blend(&lambda, &lambda_next, t);
                let trial = evaluate(problem, pool, &ut, &lt, rho)?;
                if trial.merit() < (1.0 - 1e-4 * t) * eval.merit() {
                    next = trial;
                    u_next = ut;
                    lambda_next = lt;
                    break;
                }
                t *= 0.5;
            }
        }
        u = u_next;
        lambda = lambda_next;
        eval = next;
    }
}

/// Coefficient-wise violations of the first-order optimality system
/// reconstructed from a Newton state, with `μ_a, μ_b` taken as the positive
/// and negative parts of `Ψ*p + α(u − ½) + G*λ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct KktReport {
    pub gradient: f64,
    pub box_feasibility: f64,
    pub lower_complementarity: f64,
    pub upper_complementarity: f64,
    pub multiplier_sign: f64,
    pub cut_feasibility: f64,
    pub cut_complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        [
            self.gradient,
            self.box_feasibility,
            self.lower_complementarity,
            self.upper_complementarity,
            self.multiplier_sign,
            self.cut_feasibility,
            self.cut_complementarity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn kkt_report(problem: &TrackingProblem, pool: &CutPool, u: &Control, lambda: &[f64]) -> Result<KktReport> {
    let p = problem.adjoint(u)?;
    let psi_p = problem.ops().apply_psi_star(&p)?;
    let g_lambda = pool.apply_adjoint(lambda);
    let alpha = problem.alpha();
    let mut report = KktReport::default();
    for (i, &ui) in u.coeffs().iter().enumerate() {
        let g = psi_p.coeffs()[i] + alpha * (ui - 0.5) + g_lambda[i];
        let mu_a = g.max(0.0);
        let mu_b = (-g).max(0.0);
        let grad = (psi_p.coeffs()[i] + alpha * (ui - 0.5) + mu_b - mu_a + g_lambda[i]).abs();
        report.gradient = report.gradient.max(grad);
        report.box_feasibility = report.box_feasibility.max((-ui).max(ui - 1.0));
        report.lower_complementarity = report.lower_complementarity.max((mu_a * ui).abs());
        report.upper_complementarity = report.upper_complementarity.max((mu_b * (ui - 1.0)).abs());
    }
    let gu = pool.apply(u.coeffs());
    for ((g, &l), c) in gu.iter().zip(lambda).zip(pool.cuts()) {
        report.multiplier_sign = report.multiplier_sign.max(-l);
        report.cut_feasibility = report.cut_feasibility.max(g - c.rhs);
        report.cut_complementarity = report.cut_complementarity.max((l * (g - c.rhs)).abs());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat::{FormFunctions, HeatOperators};
    use crate::mesh::SpatialMesh;
    use crate::switchpoly::{AlternatingCut, SwitchingBudget};
    use crate::timegrid::Projection;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn problem(nx: usize, nt: usize, alpha: f64, target: impl Fn(usize) -> f64) -> TrackingProblem {
        let mesh = Arc::new(SpatialMesh::unit_square(nx).unwrap());
        let forms = FormFunctions::quadratic_bump(&mesh);
        let ops = Arc::new(HeatOperators::new(mesh, TimePartition::uniform(1.0, nt).unwrap(), forms).unwrap());
        let ud = Control::new(ops.partition().clone(), 1, (0..nt).map(target).collect()).unwrap();
        let mut yd = ops.solve_forward(&ud, &vec![0.0; ops.dim()]).unwrap();
        // push the target beyond what the box allows in places
        yd.as_mut_slice().iter_mut().for_each(|v| *v *= 1.5);
        let y0 = vec![0.0; ops.dim()];
        TrackingProblem::new(ops, yd, &y0, alpha).unwrap()
    }

    #[test]
    fn pool_rows_match_projection_and_embedding() {
        let grid = TimePartition::uniform(2.0, 8).unwrap();
        let coarse = TimePartition::uniform(2.0, 4).unwrap();
        let proj = Projection::new(coarse.clone(), 1).unwrap();
        let cut = CuttingPlane::from_alternating(
            proj.clone(),
            0,
            &AlternatingCut { indices: vec![1, 2], rhs: 0.0 },
        )
        .unwrap();
        let mut pool = CutPool::new(grid.clone(), 1);
        pool.push(cut.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Control::new(grid.clone(), 1, (0..8).map(|_| rng.gen()).collect()).unwrap();
        let direct = cut.violation(&proj.project(&u).unwrap()) + cut.rhs;
        assert!((pool.apply(u.coeffs())[0] - direct).abs() < 1e-14);
        let embedded = proj.adjoint_embed(&cut.coeffs, &grid).unwrap();
        for (a, b) in pool.apply_adjoint(&[1.0]).iter().zip(embedded.coeffs()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let prob = problem(5, 3, 0.1, |_| 0.5);
        let pool = CutPool::new(prob.partition().clone(), 1);
        let u = Control::constant(prob.partition().clone(), 1, 0.5);
        assert!(solve(&prob, &pool, &u, &[], 0.0, &NewtonConfig::default()).is_err());
        assert!(solve(&prob, &pool, &u, &[1.0], 1e-3, &NewtonConfig::default()).is_err());
        let zero_alpha = prob.with_alpha(0.0).unwrap();
        assert!(solve(&zero_alpha, &pool, &u, &[], 1e-3, &NewtonConfig::default()).is_err());
    }

    #[test]
    fn all_active_step_needs_no_krylov() {
        let prob = problem(5, 4, 0.1, |_| 0.5);
        let pool = CutPool::new(prob.partition().clone(), 1);
        let sets = ActiveSets {
            upper: vec![true, false, true, false],
            lower: vec![false, true, false, true],
            cuts: vec![],
        };
        let u = Control::constant(prob.partition().clone(), 1, 0.3);
        let out = newton_step(&prob, &pool, &sets, (&u, &[]), MinresConfig::default()).unwrap();
        assert_eq!(out.u.coeffs(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(out.krylov_iterations, 0);
    }

    #[test]
    fn converged_state_satisfies_kkt_with_a_cut() {
        let prob = problem(7, 10, 0.05, |i| if (i / 2) % 2 == 0 { 0.9 } else { 0.1 });
        let mut pool = CutPool::new(prob.partition().clone(), 1);
        let cold = solve(&prob, &pool, &Control::constant(prob.partition().clone(), 1, 0.5), &[], 1e-5, &NewtonConfig::default()).unwrap();
        assert!(cold.converged());
        let w = Projection::new(prob.partition().clone(), 1).unwrap().project(&cold.u).unwrap();
        let (cut, v) = crate::switchpoly::separate(&w, SwitchingBudget::new(1).unwrap()).unwrap().expect("violated");
        assert!(v > 0.0);
        pool.push(CuttingPlane::from_alternating(Projection::new(prob.partition().clone(), 1).unwrap(), 0, &cut).unwrap()).unwrap();
        let warm = solve(&prob, &pool, &cold.u, &[0.0], 1e-5, &NewtonConfig::default()).unwrap();
        assert!(warm.converged(), "{:?}", warm.status);
        let report = kkt_report(&prob, &pool, &warm.u, &warm.lambda).unwrap();
        assert!(report.max() < 1e-8, "{report:?}");
        assert!(warm.lambda[0] > 0.0);
    }

    #[test]
    fn warm_start_from_solution_stops_immediately() {
        let prob = problem(6, 8, 0.05, |i| (i as f64 * 0.9).sin().abs());
        let pool = CutPool::new(prob.partition().clone(), 1);
        let cfg = NewtonConfig::default();
        let first = solve(&prob, &pool, &Control::constant(prob.partition().clone(), 1, 0.5), &[], 1e-5, &cfg).unwrap();
        assert!(first.converged());
        let again = solve(&prob, &pool, &first.u, &first.lambda, 1e-5, &cfg).unwrap();
        assert!(again.iterations <= 1);
        assert_eq!(again.active, first.active);
    }
}
