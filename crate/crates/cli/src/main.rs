//! Command-line experiments: single runs, α and N_t sweeps, instance files
//! and the validation suite.
//!
//! Exit codes: 0 clean stop, 1 I/O or failed validation, 2 Newton failure,
//! 3 cut cap reached, 4 configuration error.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use switch_ocp::outerloop::{self, OuterError};
use switch_ocp::{validate, BoundLogRecord, Instance, InstanceSpec, NewtonConfig, OuterConfig, OuterStatus, ProjectionStrategy};

const EXIT_IO: u8 = 1;
const EXIT_NEWTON: u8 = 2;
const EXIT_CUT_CAP: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "switch-ocp", version, about = "Outer approximation for switching-constrained heat control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the outer loop once and write its bound trace.
    Run(RunArgs),
    /// One run per α on a shared instance.
    SweepAlpha {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [2e-3, 3e-3, 5e-3, 1e-2])]
        alphas: Vec<f64>,
    },
    /// One run per control grid size on a shared instance.
    SweepNt {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [25, 50, 100, 200, 400])]
        nts: Vec<usize>,
    },
    /// Write an instance spec file, optionally with a dense dump of y_d.
    GenInstance {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Spec file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dense: Option<PathBuf>,
    },
    /// Oracle and invariant checks.
    Validate,
}

#[derive(Args, Clone)]
struct InstanceArgs {
    /// Instance spec file; explicit flags override its entries.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nt_fine: Option<usize>,
    /// Regularization used to build y_d.
    #[arg(long)]
    instance_alpha: Option<f64>,
}

impl InstanceArgs {
    fn spec(&self) -> Result<InstanceSpec, Failure> {
        let mut spec = match &self.spec {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
                InstanceSpec::parse(&text).map_err(Failure::config)?
            }
            None => InstanceSpec::default(),
        };
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(nx) = self.nx {
            spec.nx = nx;
        }
        if let Some(nt_fine) = self.nt_fine {
            spec.nt_fine = nt_fine;
        }
        if let Some(alpha) = self.instance_alpha {
            spec.alpha = alpha;
        }
        spec.validate().map_err(Failure::config)?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Projection {
    Grid,
    Dyadic,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Control intervals; must divide the fine grid size.
    #[arg(long, default_value_t = 400)]
    nt: usize,
    #[arg(long, default_value_t = 2)]
    sigma_max: usize,
    #[arg(long, default_value_t = 1e-2)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-5)]
    rho: f64,
    #[arg(long, default_value_t = 0.01)]
    cut_tol_rel: f64,
    #[arg(long, default_value_t = 1e-6)]
    cut_tol_abs: f64,
    #[arg(long, default_value_t = 100)]
    max_cuts: usize,
    #[arg(long, default_value_t = 50)]
    newton_max_iter: usize,
    #[arg(long, default_value_t = 1e-12)]
    krylov_tol: f64,
    #[arg(long, value_enum, default_value_t = Projection::Grid)]
    projection: Projection,
    /// Trace CSV for `run`, output directory for sweeps.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self, alpha: f64) -> Result<OuterConfig, Failure> {
        let defaults = NewtonConfig::default();
        let config = OuterConfig {
            alpha,
            rho: self.rho,
            sigma_max: self.sigma_max,
            tol_rel: self.cut_tol_rel,
            tol_abs: self.cut_tol_abs,
            max_cuts: self.max_cuts,
            newton: NewtonConfig {
                max_iter: self.newton_max_iter,
                krylov: switch_ocp::minres::MinresConfig { tol: self.krylov_tol, ..defaults.krylov },
                ..defaults
            },
            projection: match self.projection {
                Projection::Grid => ProjectionStrategy::Grid,
                Projection::Dyadic => ProjectionStrategy::Dyadic,
            },
            batch_cuts: false,
        };
        config.validate().map_err(Failure::config)?;
        if !(self.krylov_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Failure::config("Newton and Krylov caps must be positive"));
        }
        Ok(config)
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self { code: EXIT_CONFIG, message: e.to_string() }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
    }
}

/// Outcome of one outer-loop run.
struct Trace {
    log: Vec<BoundLogRecord>,
    code: u8,
    summary: String,
}

fn solve(instance: &Instance, nt: usize, config: &OuterConfig) -> Result<Trace, Failure> {
    let problem = instance.problem(nt).map_err(Failure::config)?;
    match outerloop::run(&problem, config) {
        Ok(res) => {
            let last = res.log.last().expect("log has at least one record");
            let (code, stop) = match res.status {
                OuterStatus::Converged => (0, "violation below threshold"),
                OuterStatus::CutCap => (EXIT_CUT_CAP, "cut cap reached"),
            };
            let summary = format!(
                "final bound {:.12e}, {} cuts, {:.3} s CPU ({stop})",
                last.lower_bound,
                res.pool.len(),
                last.cpu_seconds
            );
            Ok(Trace { log: res.log, code, summary })
        }
        Err(OuterError::Newton { state, log }) => {
            let summary = format!(
                "Newton failure ({:?}) after {} cuts, residual {:.2e}",
                state.status,
                state.lambda.len(),
                state.residual_norm()
            );
            Ok(Trace { log, code: EXIT_NEWTON, summary })
        }
        Err(OuterError::Setup(e)) => Err(Failure::config(e)),
    }
}

fn write_trace(out: impl Write, log: &[BoundLogRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "cpu_seconds", "lower_bound", "max_violation", "num_cuts", "bv_seminorm"])?;
    for r in log {
        let bv: Vec<String> = r.bv_seminorm.iter().map(|v| v.to_string()).collect();
        w.write_record([
            r.iteration.to_string(),
            r.cpu_seconds.to_string(),
            r.lower_bound.to_string(),
            r.max_violation.to_string(),
            r.num_cuts.to_string(),
            bv.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn save_trace(path: &Path, log: &[BoundLogRecord]) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| Failure::io(path, e))?;
    write_trace(file, log).map_err(|e| Failure::io(path, e))
}

fn run(args: &RunArgs) -> Result<u8, Failure> {
    let spec = args.instance.spec()?;
    let config = args.config(args.alpha)?;
    let instance = Instance::build(&spec).map_err(Failure::config)?;
    instance.grid(args.nt).map_err(Failure::config)?;
    let trace = solve(&instance, args.nt, &config)?;
    match &args.out {
        Some(path) => {
            save_trace(path, &trace.log)?;
            println!("{}", trace.summary);
        }
        None => {
            write_trace(io::stdout().lock(), &trace.log).map_err(|e| Failure::io(Path::new("<stdout>"), e))?;
            eprintln!("{}", trace.summary);
        }
    }
    Ok(trace.code)
}

fn thread_cap() -> Result<usize, Failure> {
    match std::env::var("SWITCH_OCP_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Failure::config(format!("SWITCH_OCP_THREADS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `jobs` on at most `SWITCH_OCP_THREADS` threads, each writing its own
/// trace file, and returns the most severe exit code.
fn sweep(instance: &Instance, jobs: Vec<(String, usize, OuterConfig)>, dir: &Path) -> Result<u8, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    let threads = thread_cap()?.min(jobs.len()).max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Trace, Failure>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some((name, nt, config)) = jobs.get(k) else { break };
                let outcome = solve(instance, *nt, config).and_then(|t| {
                    save_trace(&dir.join(format!("{name}.csv")), &t.log)?;
                    Ok(t)
                });
                results.lock().unwrap()[k] = Some(outcome);
            });
        }
    });
    let mut code = 0;
    for ((name, _, _), outcome) in jobs.iter().zip(results.into_inner().unwrap()) {
        let trace = outcome.expect("every job ran")?;
        println!("{name}: {}", trace.summary);
        code = severity(code, trace.code);
    }
    Ok(code)
}

fn severity(a: u8, b: u8) -> u8 {
    let rank = |c: u8| match c {
        EXIT_NEWTON => 2,
        EXIT_CUT_CAP => 1,
        _ => 0,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

fn sweep_dir(args: &RunArgs) -> PathBuf {
    args.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn sweep_alpha(args: &RunArgs, alphas: &[f64]) -> Result<u8, Failure> {
    let spec = args.instance.spec()?;
    let mut jobs = Vec::new();
    for &alpha in alphas {
        jobs.push((format!("trace_alpha_{alpha:e}"), args.nt, args.config(alpha)?));
    }
    let instance = Instance::build(&spec).map_err(Failure::config)?;
    instance.grid(args.nt).map_err(Failure::config)?;
    sweep(&instance, jobs, &sweep_dir(args))
}

fn sweep_nt(args: &RunArgs, nts: &[usize]) -> Result<u8, Failure> {
    let spec = args.instance.spec()?;
    let config = args.config(args.alpha)?;
    let instance = Instance::build(&spec).map_err(Failure::config)?;
    let mut jobs = Vec::new();
    for &nt in nts {
        instance.grid(nt).map_err(Failure::config)?;
        jobs.push((format!("trace_nt_{nt}"), nt, config));
    }
    sweep(&instance, jobs, &sweep_dir(args))
}

fn gen_instance(args: &InstanceArgs, out: Option<&Path>, dense: Option<&Path>) -> Result<u8, Failure> {
    let spec = args.spec()?;
    let text = spec.to_key_value();
    match out {
        Some(path) => fs::write(path, &text).map_err(|e| Failure::io(path, e))?,
        None => print!("{text}"),
    }
    if let Some(path) = dense {
        let instance = Instance::build(&spec).map_err(Failure::config)?;
        let mut file = io::BufWriter::new(File::create(path).map_err(|e| Failure::io(path, e))?);
        instance.write_dense(&mut file).map_err(|e| Failure::io(path, e))?;
        file.flush().map_err(|e| Failure::io(path, e))?;
    }
    Ok(0)
}

fn run_validate() -> u8 {
    let checks = validate::run_all(validate::f2_standard);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        0
    } else {
        EXIT_IO
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::SweepAlpha { run, alphas } => sweep_alpha(run, alphas),
        Command::SweepNt { run, nts } => sweep_nt(run, nts),
        Command::GenInstance { instance, out, dense } => gen_instance(instance, out.as_deref(), dense.as_deref()),
        Command::Validate => Ok(run_validate()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
