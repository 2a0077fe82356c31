//! Outer approximation: solve the relaxation with the current cuts, separate
//! the projected solution, add the most violated alternating inequality and
//! re-solve from the previous solution.

use crate::clock::{Clock, CpuClock};
use crate::error::{Error, Result};
use crate::heat::TrackingProblem;
use crate::ssnewton::{self, CutPool, NewtonConfig, NewtonState};
use crate::switchpoly::{separate, AlternatingCut, CuttingPlane, SwitchingBudget};
use crate::timegrid::{Control, Projection, TimePartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionStrategy {
    /// Intervals of the control grid at every iteration.
    Grid,
    /// Uniform dyadic partitions, refined only when the coarser one cannot
    /// separate the current iterate.
    Dyadic,
}

#[derive(Debug, Clone, Copy)]
pub struct OuterConfig {
    pub alpha: f64,
    pub rho: f64,
    pub sigma_max: usize,
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub max_cuts: usize,
    pub newton: NewtonConfig,
    pub projection: ProjectionStrategy,
    /// Add one cut per violated switch instead of only the most violated.
    pub batch_cuts: bool,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            rho: 1e-5,
            sigma_max: 2,
            tol_rel: 0.01,
            tol_abs: 1e-6,
            max_cuts: 100,
            newton: NewtonConfig::default(),
            projection: ProjectionStrategy::Grid,
            batch_cuts: false,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.rho > 0.0) {
            return Err(Error::InvalidParameter("alpha and rho must be positive".into()));
        }
        if !(self.tol_rel > 0.0) || !(self.tol_abs > 0.0) {
            return Err(Error::InvalidParameter("violation tolerances must be positive".into()));
        }
        if self.max_cuts == 0 {
            return Err(Error::InvalidParameter("max_cuts must be at least 1".into()));
        }
        SwitchingBudget::new(self.sigma_max)?;
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        let b = SwitchingBudget::new(self.sigma_max).map_or(0.0, |b| b.rhs());
        (self.tol_rel * b).max(self.tol_abs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundLogRecord {
    pub iteration: usize,
    pub cpu_seconds: f64,
    /// `f(u^k)`, a lower bound for the switching-constrained problem.
    pub lower_bound: f64,
    /// `f(u^k) − α n T / 8`: the bound with the Tikhonov value of binary
    /// controls removed, comparable across `α`.
    pub tracking_bound: f64,
    /// Largest violation found by separation; 0 if none.
    pub max_violation: f64,
    pub num_cuts: usize,
    pub bv_seminorm: Vec<f64>,
    pub newton_iterations: usize,
    pub krylov_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterStatus {
    /// Largest violation at or below the threshold.
    Converged,
    CutCap,
}

#[derive(Debug, Clone)]
pub struct OuterResult {
    pub state: NewtonState,
    pub log: Vec<BoundLogRecord>,
    pub pool: CutPool,
    pub status: OuterStatus,
}

#[derive(Debug, thiserror::Error)]
pub enum OuterError {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("Newton solve did not converge after {} cuts ({:?})", .state.lambda.len(), .state.status)]
    Newton { state: Box<NewtonState>, log: Vec<BoundLogRecord> },
}

/// Projection used for separation. `Grid` ignores `level`; `Dyadic` returns
/// `2^level` uniform intervals while those are strictly coarser than and
/// nested in `grid`, and `grid` itself beyond.
pub fn choose_projection(level: u32, strategy: ProjectionStrategy, grid: &TimePartition, switches: usize) -> Result<Projection> {
    let partition = match strategy {
        ProjectionStrategy::Grid => grid.clone(),
        ProjectionStrategy::Dyadic => {
            let mut p = TimePartition::uniform(grid.horizon(), 1)?;
            for _ in 0..level {
                let next = p.refine_dyadic();
                if next.num_intervals() >= grid.num_intervals() || !grid.is_refinement_of(&next) {
                    return Projection::new(grid.clone(), switches);
                }
                p = next;
            }
            p
        }
    };
    Projection::new(partition, switches)
}

fn finest_dyadic_level(grid: &TimePartition) -> u32 {
    let mut level = 0;
    let mut p = TimePartition::uniform(grid.horizon(), 1).expect("positive horizon");
    loop {
        let next = p.refine_dyadic();
        if next.num_intervals() > grid.num_intervals() || !grid.is_refinement_of(&next) {
            return level;
        }
        p = next;
        level += 1;
    }
}

/// Separation on one projection: per switch, the most violated cut.
fn separate_all(projection: &Projection, u: &Control, budget: SwitchingBudget) -> Result<Vec<(usize, AlternatingCut, f64)>> {
    let w = projection.project(u)?;
    let n = projection.partition().num_intervals();
    let mut out = Vec::new();
    for j in 0..projection.switches() {
        if let Some((cut, v)) = separate(&w[j * n..(j + 1) * n], budget)? {
            out.push((j, cut, v));
        }
    }
    Ok(out)
}

pub fn run(problem: &TrackingProblem, config: &OuterConfig) -> std::result::Result<OuterResult, OuterError> {
    run_with_clock(problem, config, &CpuClock)
}

pub fn run_with_clock(
    problem: &TrackingProblem,
    config: &OuterConfig,
    clock: &dyn Clock,
) -> std::result::Result<OuterResult, OuterError> {
    config.validate()?;
    let start = clock.seconds();
    let problem = problem.with_alpha(config.alpha)?;
    let grid = problem.partition().clone();
    let switches = problem.switches();
    let budget = SwitchingBudget::new(config.sigma_max)?;
    let threshold = config.threshold();
    let binary_tikhonov = config.alpha * switches as f64 * grid.horizon() / 8.0;
    let top_level = finest_dyadic_level(&grid);

    let mut pool = CutPool::new(grid.clone(), switches);
    let mut u = Control::constant(grid.clone(), switches, 0.5);
    let mut lambda: Vec<f64> = Vec::new();
    let mut level = 0u32;
    let mut log = Vec::new();
    let mut last_cpu = f64::NEG_INFINITY;

    loop {
        let state = ssnewton::solve(&problem, &pool, &u, &lambda, config.rho, &config.newton)?;
        let bound = problem.objective(&state.u)?;

        // separation, refining the dyadic level until something is violated
        let (projection, mut found) = loop {
            let projection = choose_projection(level, config.projection, &grid, switches)?;
            let found = separate_all(&projection, &state.u, budget)?;
            let violated = found.iter().any(|c| c.2 > threshold);
            if violated || config.projection == ProjectionStrategy::Grid || level >= top_level {
                break (projection, found);
            }
            level += 1;
        };
        let max_violation = found.iter().map(|c| c.2).fold(0.0, f64::max);

        let mut cpu = clock.seconds() - start;
        if cpu <= last_cpu {
            cpu = last_cpu + 1e-9;
        }
        last_cpu = cpu;
        log.push(BoundLogRecord {
            iteration: log.len(),
            cpu_seconds: cpu,
            lower_bound: bound,
            tracking_bound: bound - binary_tikhonov,
            max_violation,
            num_cuts: pool.len(),
            bv_seminorm: state.u.bv_seminorm(),
            newton_iterations: state.iterations,
            krylov_iterations: state.krylov_iterations,
        });

        if !state.converged() {
            return Err(OuterError::Newton { state: Box::new(state), log });
        }
        if max_violation <= threshold {
            return Ok(OuterResult { state, log, pool, status: OuterStatus::Converged });
        }
        if pool.len() >= config.max_cuts {
            return Ok(OuterResult { state, log, pool, status: OuterStatus::CutCap });
        }

        found.retain(|c| c.2 > threshold);
        found.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
        if !config.batch_cuts {
            found.truncate(1);
        }
        for (j, cut, _) in &found {
            if pool.len() >= config.max_cuts {
                break;
            }
            pool.push(CuttingPlane::from_alternating(projection.clone(), *j, cut)?)?;
        }
        u = state.u;
        lambda = state.lambda;
        lambda.resize(pool.len(), 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_strategy_is_fixed() {
        let grid = TimePartition::uniform(2.0, 12).unwrap();
        for k in 0..4 {
            let p = choose_projection(k, ProjectionStrategy::Grid, &grid, 1).unwrap();
            assert_eq!(p.partition(), &grid);
        }
    }

    #[test]
    fn dyadic_levels_are_nested_and_uniform() {
        let grid = TimePartition::uniform(2.0, 32).unwrap();
        let p3 = choose_projection(3, ProjectionStrategy::Dyadic, &grid, 1).unwrap();
        assert_eq!(p3.partition().num_intervals(), 8);
        let mut prev = choose_projection(0, ProjectionStrategy::Dyadic, &grid, 1).unwrap();
        for level in 1..8 {
            let p = choose_projection(level, ProjectionStrategy::Dyadic, &grid, 1).unwrap();
            assert!(p.partition().is_refinement_of(prev.partition()));
            assert!((p.partition().quasi_uniformity() - 1.0).abs() < 1e-12);
            prev = p;
        }
        assert_eq!(prev.partition().num_intervals(), 32);
        assert_eq!(finest_dyadic_level(&grid), 5);
        assert_eq!(finest_dyadic_level(&TimePartition::uniform(2.0, 12).unwrap()), 2);
    }

    #[test]
    fn threshold_floor_for_zero_rhs() {
        let cfg = OuterConfig { sigma_max: 1, ..OuterConfig::default() };
        assert_eq!(cfg.threshold(), 1e-6);
        let cfg = OuterConfig { sigma_max: 4, ..OuterConfig::default() };
        assert!((cfg.threshold() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(OuterConfig { max_cuts: 0, ..OuterConfig::default() }.validate().is_err());
        assert!(OuterConfig { alpha: -1.0, ..OuterConfig::default() }.validate().is_err());
        assert!(OuterConfig { sigma_max: 0, ..OuterConfig::default() }.validate().is_err());
    }
}
