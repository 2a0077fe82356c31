//! Acceptance suite: one `PASS`/`FAIL` line per criterion, nonzero exit if
//! any criterion fails.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use switch_ocp::heat::TimeLayout;
use switch_ocp::instancegen::{Instance, InstanceSpec};
use switch_ocp::outerloop::{self, BoundLogRecord, OuterConfig, OuterResult, OuterStatus};
use switch_ocp::ssnewton::{self, CutPool, NewtonConfig};
use switch_ocp::switchpoly::{separate_switches, SwitchingBudget};
use switch_ocp::validate;
use switch_ocp::{Control, FormFunctions, HeatOperators, Projection, SpatialMesh, TimePartition};

static REPORTED: AtomicBool = AtomicBool::new(false);

fn report(name: &str, passed: bool, elapsed: Duration, limit: Duration, detail: String) {
    REPORTED.store(true, Ordering::SeqCst);
    let ok = passed && elapsed < limit;
    println!(
        "{} {name}: {detail} ({:.1} s, limit {} s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(passed, "{name}: {detail}");
    assert!(elapsed < limit, "{name}: took {elapsed:?}");
}

fn median(v: &mut [usize]) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2]) as f64
    }
}

/// Benchmark instance at `nx = 9` on a fine grid divisible by 32.
fn benchmark(seed: u64) -> Instance {
    let spec = InstanceSpec { seed, nx: 9, nt_fine: 384, ..InstanceSpec::default() };
    Instance::build(&spec).unwrap()
}

fn outer(inst: &Instance, nt: usize, alpha: f64, max_cuts: usize) -> OuterResult {
    let problem = inst.problem(nt).unwrap();
    let cfg = OuterConfig { alpha, max_cuts, ..OuterConfig::default() };
    outerloop::run(&problem, &cfg).unwrap()
}

fn bounds(log: &[BoundLogRecord]) -> Vec<f64> {
    log.iter().map(|r| r.lower_bound).collect()
}

fn separation_oracle_equivalence() {
    let start = Instant::now();
    let r = validate::separation_equivalence(12, 1000, 2024).unwrap();
    let passed = r.binary_mismatch == 0.0
        && r.fractional_mismatch <= 1e-12
        && r.disagreements == 0
        && r.invalid_cuts == 0
        && r.fractional_cases == 1000;
    report(
        "separation oracle equivalence",
        passed,
        start.elapsed(),
        Duration::from_secs(60),
        format!(
            "{} binary / {} fractional cases, mismatch {:.1e} / {:.1e}, disagreements {}, invalid cuts {}",
            r.binary_cases, r.fractional_cases, r.binary_mismatch, r.fractional_mismatch, r.disagreements, r.invalid_cuts
        ),
    );
}

fn discrete_adjointness() {
    let start = Instant::now();
    let (sigma, psi) = validate::adjointness(17, 32, 50, 99).unwrap();
    report(
        "discrete adjointness",
        sigma < 1e-12 && psi < 1e-12,
        start.elapsed(),
        Duration::from_secs(30),
        format!("max relative error state {sigma:.2e}, control {psi:.2e}"),
    );
}

fn gradient_check() {
    let start = Instant::now();
    let spec = InstanceSpec { seed: 17, nx: 9, nt_fine: 400, ..InstanceSpec::default() };
    let inst = Instance::build(&spec).unwrap();
    let err = validate::gradient_check(&inst.problem(16).unwrap(), 20, 1e-4, 3).unwrap();
    report(
        "gradient check",
        err < 1e-6,
        start.elapsed(),
        Duration::from_secs(60),
        format!("max relative error {err:.2e} over 20 directions"),
    );
}

fn heat_decay_error(nx: usize, nt: usize, horizon: f64) -> f64 {
    let mesh = Arc::new(SpatialMesh::unit_square(nx).unwrap());
    let forms = FormFunctions::quadratic_bump(&mesh);
    let ops = HeatOperators::new(Arc::clone(&mesh), TimePartition::uniform(horizon, nt).unwrap(), forms).unwrap();
    let exact = |t: f64, x: f64, y: f64| (-2.0 * PI * PI * t).exp() * (PI * x).sin() * (PI * y).sin();
    let y0 = ops.interpolate(|x, y| exact(0.0, x, y));
    let y = ops.free_response(&y0).unwrap();
    assert_eq!(y.layout(), TimeLayout::Nodal);
    let weights = ops.trapezoid_weights();
    let mut total = 0.0;
    for (k, &t) in ops.partition().boundaries().iter().enumerate() {
        let e = mesh.l2_error(&mesh.extend_from_interior(y.level(k)), |x, yy| exact(t, x, yy));
        total += weights[k] * e * e;
    }
    total.sqrt()
}

fn pde_convergence() {
    let start = Instant::now();
    let horizon = 0.1;
    let errors: Vec<f64> = [(9, 16), (17, 32), (33, 64)]
        .iter()
        .map(|&(nx, nt)| heat_decay_error(nx, nt, horizon))
        .collect();
    let ratios = [errors[0] / errors[1], errors[1] / errors[2]];
    report(
        "PDE convergence",
        ratios.iter().all(|&r| r >= 3.5),
        start.elapsed(),
        Duration::from_secs(60),
        format!("errors {:?}, ratios {ratios:.2?}", errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>()),
    );
}

fn tiny_instance_kkt_oracle() {
    let start = Instant::now();
    let r = validate::tiny_kkt(10, 500, 1e-5, validate::f2_standard).unwrap();
    report(
        "tiny-instance KKT oracle",
        r.instances == 10 && r.all_converged && r.max_objective_error < 1e-9 && r.max_kkt_residual < 1e-8,
        start.elapsed(),
        Duration::from_secs(120),
        format!(
            "{} instances, objective error {:.2e}, KKT residual {:.2e}",
            r.instances, r.max_objective_error, r.max_kkt_residual
        ),
    );
}

fn outer_loop_monotonicity_and_soundness() {
    let start = Instant::now();
    let cfg = OuterConfig::default();
    let budget = SwitchingBudget::new(cfg.sigma_max).unwrap();
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for seed in 1..=5 {
        let inst = benchmark(seed);
        let res = outer(&inst, 32, cfg.alpha, cfg.max_cuts);
        let b = bounds(&res.log);
        let monotone = b.windows(2).all(|w| w[1] >= w[0] - 1e-9);
        let first_bv = res.log[0].bv_seminorm[0];
        let w = Projection::new(res.state.u.partition().clone(), 1).unwrap().project(&res.state.u).unwrap();
        let final_violation = separate_switches(&w, 1, budget).unwrap().map_or(0.0, |c| c.2);
        let ok = monotone
            && first_bv > cfg.sigma_max as f64
            && res.log[0].max_violation > 0.0
            && res.status == OuterStatus::Converged
            && final_violation <= cfg.threshold();
        if !ok {
            failures.push(seed);
        }
        summary.push(format!("seed {seed}: {} cuts, |u0|_BV {first_bv:.2}, final violation {final_violation:.1e}", res.pool.len()));
    }
    report(
        "outer-loop monotonicity and soundness",
        failures.is_empty(),
        start.elapsed(),
        Duration::from_secs(600),
        format!("{}; failing seeds {failures:?}", summary.join("; ")),
    );
}

fn bound_trace_shape() {
    let start = Instant::now();
    let inst = benchmark(1);
    let res = outer(&inst, 32, 1e-2, 100);
    let b = bounds(&res.log);
    let n = b.len();
    let passed = n >= 11 && {
        let first = b[5] - b[0];
        let last = b[n - 1] - b[n - 6];
        first > 0.0 && last < 0.1 * first
    };
    let detail = if n >= 6 {
        format!("{} cuts, first-5 gain {:.3e}, last-5 gain {:.3e}", n - 1, b[5] - b[0], b[n - 1] - b[n - 6])
    } else {
        format!("only {} cuts", n - 1)
    };
    report("bound trace shape", passed, start.elapsed(), Duration::from_secs(300), detail);
}

fn warm_start_benefit() {
    let start = Instant::now();
    let inst = benchmark(2);
    let cfg = OuterConfig::default();
    let problem = inst.problem(32).unwrap().with_alpha(cfg.alpha).unwrap();
    let res = outerloop::run(&problem, &cfg).unwrap();
    let mut warm: Vec<usize> = res.log.iter().skip(1).map(|r| r.newton_iterations).collect();
    let mut cold = Vec::new();
    let mut pool = CutPool::new(problem.partition().clone(), 1);
    let uncapped = NewtonConfig { max_iter: 1000, ..cfg.newton };
    for cut in res.pool.cuts() {
        pool.push(cut.clone()).unwrap();
        let u0 = Control::constant(problem.partition().clone(), 1, 0.5);
        let state = ssnewton::solve(&problem, &pool, &u0, &vec![0.0; pool.len()], cfg.rho, &uncapped).unwrap();
        assert!(state.converged());
        cold.push(state.iterations);
    }
    let (mw, mc) = (median(&mut warm), median(&mut cold));
    report(
        "warm-start benefit",
        !warm.is_empty() && mw <= mc,
        start.elapsed(),
        Duration::from_secs(600),
        format!("{} cuts, median Newton iterations warm {mw} vs cold {mc}", warm.len()),
    );
}

fn alpha_ordering() {
    let start = Instant::now();
    let inst = benchmark(3);
    let large = outer(&inst, 32, 1e-2, 100);
    let small = outer(&inst, 32, 2e-3, 100);
    let k = large.log.len().min(small.log.len());
    let ordered = (0..k).all(|i| large.log[i].tracking_bound <= small.log[i].tracking_bound + 1e-9);
    let fewer = large.pool.len() <= small.pool.len();
    report(
        "alpha ordering",
        ordered && fewer && large.status == OuterStatus::Converged && small.status == OuterStatus::Converged,
        start.elapsed(),
        Duration::from_secs(600),
        format!(
            "cuts to stop: alpha=1e-2 {} vs alpha=2e-3 {}; bound ordering at {k} matched iterations {}",
            large.pool.len(),
            small.pool.len(),
            if ordered { "holds" } else { "violated" }
        ),
    );
}

fn main() {
    let criteria: [(&str, fn()); 9] = [
        ("separation oracle equivalence", separation_oracle_equivalence),
        ("discrete adjointness", discrete_adjointness),
        ("gradient check", gradient_check),
        ("PDE convergence", pde_convergence),
        ("tiny-instance KKT oracle", tiny_instance_kkt_oracle),
        ("outer-loop monotonicity and soundness", outer_loop_monotonicity_and_soundness),
        ("bound trace shape", bound_trace_shape),
        ("warm-start benefit", warm_start_benefit),
        ("alpha ordering", alpha_ordering),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        REPORTED.store(false, Ordering::SeqCst);
        if std::panic::catch_unwind(check).is_err() {
            failed += 1;
            if !REPORTED.load(Ordering::SeqCst) {
                println!("FAIL {name}: aborted before reporting");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
